//! Prompt templates and `{placeholder}` rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Step1Propositions,
    #[serde(rename = "p2_1_dialog")]
    P21Dialog,
    #[serde(rename = "p2_2_contextualize")]
    P22Contextualize,
    #[serde(rename = "p2_3_ground")]
    P23Ground,
    ResponseGen,
    Rewriter,
}

impl TemplateName {
    pub const ALL: [TemplateName; 6] = [
        TemplateName::Step1Propositions,
        TemplateName::P21Dialog,
        TemplateName::P22Contextualize,
        TemplateName::P23Ground,
        TemplateName::ResponseGen,
        TemplateName::Rewriter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Step1Propositions => "step1_propositions",
            TemplateName::P21Dialog => "p2_1_dialog",
            TemplateName::P22Contextualize => "p2_2_contextualize",
            TemplateName::P23Ground => "p2_3_ground",
            TemplateName::ResponseGen => "response_gen",
            TemplateName::Rewriter => "rewriter",
        }
    }

    pub fn template(self) -> PromptTemplate {
        let body = match self {
            TemplateName::Step1Propositions => STEP1_PROPOSITIONS,
            TemplateName::P21Dialog => P2_1_DIALOG,
            TemplateName::P22Contextualize => P2_2_CONTEXTUALIZE,
            TemplateName::P23Ground => P2_3_GROUND,
            TemplateName::ResponseGen => RESPONSE_GEN,
            TemplateName::Rewriter => REWRITER,
        };
        PromptTemplate {
            name: self.as_str().to_string(),
            body: body.to_string(),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown template `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            body: body.into(),
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for seg in segments(&self.body) {
            if let Segment::Slot(name) = seg {
                if !out.iter().any(|n| n == name) {
                    out.push(name.to_string());
                }
            }
        }
        out
    }

    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String> {
        render_prompt(self, bindings)
    }
}

enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

// `{name}` with an identifier inside is a slot; any other brace (JSON
// examples inside the prompt bodies) is literal text.
fn segments(body: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut last = 0;
    let mut search = 0;
    while let Some(open) = body[search..].find('{').map(|i| i + search) {
        let Some(close) = body[open + 1..].find(['}', '{']).map(|i| i + open + 1) else {
            break;
        };
        let inner = &body[open + 1..close];
        if body.as_bytes()[close] == b'}' && is_ident(inner) {
            if open > last {
                out.push(Segment::Text(&body[last..open]));
            }
            out.push(Segment::Slot(inner));
            last = close + 1;
            search = close + 1;
        } else {
            search = open + 1;
        }
    }
    if last < body.len() {
        out.push(Segment::Text(&body[last..]));
    }
    out
}

/// Substitutes every `{placeholder}` in one pass. Bound values are inserted
/// verbatim and never re-scanned.
pub fn render_prompt(template: &PromptTemplate, bindings: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(template.body.len());
    for seg in segments(&template.body) {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Slot(name) => match bindings.get(name) {
                Some(v) => out.push_str(v),
                None => {
                    return Err(Error::Template {
                        template: template.name.clone(),
                        placeholder: name.to_string(),
                    })
                }
            },
        }
    }
    Ok(out)
}

pub const STEP1_PROPOSITIONS: &str = r#"Read the document you will be given and look for questions and answers in it. Return propositions if the document includes information that could actually answer user questions. If the document only has links or vague information that can't answer questions, do not return propositions. Also, do not return propositions if the document only has questions. If the document does have questions and answers, break them down into simple and clear propositions that make sense on their own. Recognize the language of the document given below and provide the propositions in the original language as the given Document.

If you do not create propositions the reply must be an empty list such as [] and nothing else.

Here is a document:
<document>
{text}
</document>

To generate propositions you need to:

1. Split compound sentence into simple English sentences. Maintain the original phrasing from the input whenever possible.

2. For any named entity that is accompanied by additional descriptive information, separate this information into its own distinct proposition.

3. Decontextualize the proposition by adding necessary modifier to nouns or entire sentences and replacing pronouns (e.g., "it", "he", "she", "they", "this", "that") with the full name of the entities they refer to.

4. Present the results as a list of strings, formatted in JSON. Provide only the JSON and nothing else.
"#;

pub const P2_1_DIALOG: &str = r#"Your task is to read the given propositions and generate a dialog between a user and a system, where the user asks certain questions and the system tries to provide answers.

Follow these instructions:

1. Your response should be a JSON of the following format:

{
  "0" : {
    "<user>": ,
    "<system>":,
  },
  "1" : {
    "<user>": ,
    "<system>":,
  },
  ...
}

2. The dialog must start with the user greeting the system and the system replying politely.

3. The dialog must end with user thanking the system and the system replying politely.

4. In each dialog turn, the user asks a question based on a given proposition. The user question must be a self-contained, standalone question without the need to refer to previous dialog context.

5. A user may also ask complex questions, for which the answer can be two or more propositions.

6. In each dialog exchange the system answers the user question based on the propositions.

7. Make sure that the user questions referring to the same propositions are in adjacent turns.

8. Each system's answer must be a full sentence.

<propositions>
{propositions}
</propositions>
"#;

pub const P2_2_CONTEXTUALIZE: &str = r#"Your task is to read the given dialog. The dialog you will be given has a JSON format. The key <user> refers to user utterances, while the key <system> refers to the system utterances.
Make the user utterances dependent on previous dialog turns taking into account the dialog context and using pronouns to replace already mentioned information only if such information is already mentioned in the previous dialog turns.
Only return a JSON of the following format:

{
  "0" : {
    "<contextualized user>": ,
    "<system>":
  },
  "1" : {
    "<contextualized user>": ,
    "<system>":
  },
  ...
}

Here is the dialog:
<dialog>
{dialog}
</dialog>
"#;

pub const P2_3_GROUND: &str = r#"I will give you a list of propositions and a text in JSON format of question and answer pairs generated from these propositions.
I need you to act as a human annotator and evaluate the question and answer pairs provided following these instructions:

1. Provide a separate review and evaluation for each question and answer.

2. First check if the questions provided are correctly generated from the propositions provided.

3. The answer to each question should be reflecting the information provided in the propositions.

4. Note which propositions are used in each answer.

5. If a question and answer is generated from the provided propositions after your review, mark it as "accepted". If not, mark it as "not_accepted".

6. The first and last pairs should always be accepted.

7. Return only a dictionary in JSON format and nothing else. The key of each dictionary should be the same with each question answer pair given. Follow the example:

{
  "0": {
    "propositions_used":
    ,
    "explain_evaluation": ,
    "evaluation": ,

  },
}

Here are the propositions and the question-answer pairs:

<propositions>
{propositions}
</propositions>

<question and answer pairs>
{qa_pairs}
</question and answer pairs>
"#;

pub const RESPONSE_GEN: &str = r#"Your job is to answer user questions given a set of propositions in a list format. There may be irrelevant propositions included.

You only need to provided the answer. If the question cannot be answered using the provided propositions, generate the token <cannot_answer> only.

Here are the propositions: {propositions}

Here is the user question: {question}
"#;

pub const REWRITER: &str = r#"Rewrite the last user question of the dialog below so that it is self-contained and can be understood without the dialog history.
If the question is already self-contained, reply with the token no_rewrite only. Otherwise reply with the token rewrite followed by the rewritten question.

<dialog>
{input}
</dialog>
"#;

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn step1_wraps_document() {
        let t = TemplateName::Step1Propositions.template();
        let out = t.render(&bind(&[("text", "X")])).unwrap();
        assert!(out.contains("Here is a document:\n<document>\nX\n</document>"));
    }

    #[test]
    fn body_without_placeholders_is_unchanged() {
        let t = PromptTemplate::new("plain", "{ \"0\": {} } nothing {1} here");
        assert_eq!(t.render(&BTreeMap::new()).unwrap(), t.body);
    }

    #[test]
    fn repeated_placeholder() {
        let t = PromptTemplate::new("rep", "{a}{a}");
        assert_eq!(t.render(&bind(&[("a", "z")])).unwrap(), "zz");
    }

    #[test]
    fn missing_binding_names_placeholder() {
        let t = TemplateName::P23Ground.template();
        match t.render(&bind(&[("propositions", "[]")])) {
            Err(Error::Template { placeholder, .. }) => assert_eq!(placeholder, "qa_pairs"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bound_values_are_not_rescanned() {
        let t = PromptTemplate::new("t", "<{a}>");
        assert_eq!(t.render(&bind(&[("a", "{a}")])).unwrap(), "<{a}>");
    }

    #[test]
    fn shipped_templates_declare_expected_slots() {
        let slots = |t: TemplateName| t.template().placeholders();
        assert_eq!(slots(TemplateName::Step1Propositions), vec!["text"]);
        assert_eq!(slots(TemplateName::P21Dialog), vec!["propositions"]);
        assert_eq!(slots(TemplateName::P22Contextualize), vec!["dialog"]);
        assert_eq!(slots(TemplateName::P23Ground), vec!["propositions", "qa_pairs"]);
        assert_eq!(slots(TemplateName::ResponseGen), vec!["propositions", "question"]);
        assert_eq!(slots(TemplateName::Rewriter), vec!["input"]);
        for t in TemplateName::ALL {
            assert_eq!(t.as_str().parse::<TemplateName>().unwrap(), t);
        }
    }

    #[test]
    fn rendered_shipped_templates_have_no_open_slots() {
        for t in TemplateName::ALL {
            let tpl = t.template();
            let b: BTreeMap<String, String> = tpl
                .placeholders()
                .into_iter()
                .map(|p| (p, "v".to_string()))
                .collect();
            let out = tpl.render(&b).unwrap();
            let again = PromptTemplate::new("r", out.clone());
            assert!(again.placeholders().is_empty(), "{t}: {out}");
            assert_eq!(out, tpl.render(&b).unwrap());
        }
    }
}
