//! Golden prompt texts shipped with the binary.

use std::path::Path;

use vidpanel_core::prompt::PromptTemplate;

use crate::io::{read_text, IoError};

/// Embedded golden text by template name.
pub fn embedded(name: &str) -> Option<&'static str> {
    Some(match name {
        "decide_watch" => include_str!("../goldens/decide_watch.txt"),
        "key_info" => include_str!("../goldens/key_info.txt"),
        "answer" => include_str!("../goldens/answer.txt"),
        "reason" => include_str!("../goldens/reason.txt"),
        "judge" => include_str!("../goldens/judge.txt"),
        "history" => include_str!("../goldens/history.txt"),
        "key_info_history" => include_str!("../goldens/key_info_history.txt"),
        "final_answer" => include_str!("../goldens/final_answer.txt"),
        "caption_rewrite" => include_str!("../goldens/caption_rewrite.txt"),
        _ => return None,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldenCheck {
    pub name: &'static str,
    pub rendered: String,
    /// `None` when no golden exists for the template.
    pub matches: Option<bool>,
}

/// Renders every canonical template and compares it with its golden, read from `dir`
/// when given and from the embedded copies otherwise.
pub fn check_all(dir: Option<&Path>) -> Result<Vec<GoldenCheck>, IoError> {
    PromptTemplate::canonical_set()
        .into_iter()
        .map(|t| {
            let rendered = t.text().into_owned();
            let golden = match dir {
                Some(d) => {
                    let p = d.join(format!("{}.txt", t.name()));
                    p.exists().then(|| read_text(&p)).transpose()?
                }
                None => embedded(t.name()).map(String::from),
            };
            Ok(GoldenCheck {
                name: t.name(),
                matches: golden.map(|g| g == rendered),
                rendered,
            })
        })
        .collect()
}
