//! Line-oriented action grammar.
//!
//! ```text
//! TOOL: <name> <json-object-args>
//! FINAL ANSWER: <text>
//! ```
//!
//! The first line (after trimming) that starts with either prefix decides
//! the action; anything else is a thought. A line that starts with `TOOL:`
//! but does not parse degrades to a thought flagged as malformed.

use serde_json::{Map, Value};

pub const TOOL_PREFIX: &str = "TOOL:";
pub const FINAL_PREFIX: &str = "FINAL ANSWER:";

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Thought {
        text: String,
        /// Why the output could not be read as an action, if it tried to be one.
        malformed: Option<String>,
    },
    ToolCall {
        name: String,
        args: Map<String, Value>,
    },
    FinalAnswer(String),
}

impl Action {
    pub fn is_malformed(&self) -> bool {
        matches!(self, Action::Thought { malformed: Some(_), .. })
    }
}

fn strip_prefix_ci<'a>(line: &'a str, prefix: &str) -> Option<&'a str> {
    let head = line.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &line[prefix.len()..])
}

pub fn parse_action(model_output: &str) -> Action {
    if model_output.trim().is_empty() {
        return Action::Thought { text: model_output.to_string(), malformed: Some("empty output".into()) };
    }
    let mut offset = 0;
    for line in model_output.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let line_start = offset + (line.len() - trimmed.len());
        offset += line.len();
        if let Some(rest) = strip_prefix_ci(trimmed, FINAL_PREFIX) {
            return Action::FinalAnswer(rest.trim().to_string());
        }
        if strip_prefix_ci(trimmed, TOOL_PREFIX).is_some() {
            // JSON args may continue past the end of this line.
            let tail = &model_output[line_start + TOOL_PREFIX.len()..];
            return match parse_tool_call(tail) {
                Ok((name, args)) => Action::ToolCall { name, args },
                Err(reason) => Action::Thought { text: model_output.to_string(), malformed: Some(reason) },
            };
        }
    }
    Action::Thought { text: model_output.to_string(), malformed: None }
}

fn parse_tool_call(tail: &str) -> Result<(String, Map<String, Value>), String> {
    let tail = tail.trim_start_matches([' ', '\t']);
    let name_len = tail
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '-'))
        .unwrap_or(tail.len());
    let name = &tail[..name_len];
    if name.is_empty() {
        return Err("tool call without a tool name".into());
    }
    let rest = tail[name_len..].trim_start();
    if rest.is_empty() || !rest.starts_with('{') {
        // Bare `TOOL: ocr` on its own line is accepted with no arguments.
        let line_rest = tail[name_len..].lines().next().unwrap_or("").trim();
        if line_rest.is_empty() {
            return Ok((name.to_ascii_lowercase(), Map::new()));
        }
        return Err(format!("arguments for {name} must be a JSON object"));
    }
    let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<Value>();
    match stream.next() {
        Some(Ok(Value::Object(args))) => Ok((name.to_ascii_lowercase(), args)),
        Some(Ok(_)) => Err(format!("arguments for {name} must be a JSON object")),
        Some(Err(e)) => Err(format!("invalid JSON arguments for {name}: {e}")),
        None => Ok((name.to_ascii_lowercase(), Map::new())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn tool_call() {
        let a = parse_action(r#"TOOL: ocr {"region": "full"}"#);
        let Action::ToolCall { name, args } = a else { panic!("{a:?}") };
        assert_eq!(name, "ocr");
        assert_eq!(Value::Object(args), json!({"region": "full"}));
    }

    #[test]
    fn final_answer() {
        assert_eq!(parse_action("FINAL ANSWER: 42"), Action::FinalAnswer("42".into()));
    }

    #[test]
    fn plain_thought() {
        assert_eq!(
            parse_action("Let me inspect the axis labels."),
            Action::Thought { text: "Let me inspect the axis labels.".into(), malformed: None }
        );
    }

    #[test]
    fn first_action_line_wins() {
        let out = "The chart has two axes.\nTOOL: vqa {\"question\": \"what is on the x axis?\"}\nFINAL ANSWER: A";
        assert!(matches!(parse_action(out), Action::ToolCall { ref name, .. } if name == "vqa"));
        let out = "reasoning...\n  final answer: (c)\nTOOL: ocr {}";
        assert_eq!(parse_action(out), Action::FinalAnswer("(c)".into()));
    }

    #[test]
    fn multiline_json_args() {
        let out = "TOOL: code {\n  \"source\": \"print(1)\",\n  \"timeout_s\": 5\n}\ntrailing words";
        let Action::ToolCall { name, args } = parse_action(out) else { panic!() };
        assert_eq!(name, "code");
        assert_eq!(args["timeout_s"], 5);
    }

    #[test]
    fn bare_tool_name_has_no_args() {
        assert_eq!(parse_action("TOOL: caption"), Action::ToolCall { name: "caption".into(), args: Map::new() });
    }

    #[test]
    fn malformed_forms() {
        for bad in ["TOOL: ocr {region: full}", "TOOL:", "TOOL: ocr [1,2]", "TOOL: ocr please", "   "] {
            assert!(parse_action(bad).is_malformed(), "{bad:?} should be malformed");
        }
    }

    #[test]
    fn prefix_only_at_line_start() {
        assert!(matches!(
            parse_action("I will not say FINAL ANSWER: yet"),
            Action::Thought { malformed: None, .. }
        ));
    }
}
