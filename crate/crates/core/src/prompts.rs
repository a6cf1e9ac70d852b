//! Versioned prompt templates. Each file starts with a `prompt: <name>-vN`
//! line that is sent verbatim, so editing a prompt changes every request
//! digest and stale replays fail loudly.

use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub prior: String,
    pub generate: String,
    pub repair: String,
    pub decompose: String,
    pub decompose_retry: String,
    pub paraphrase: String,
    pub paraphrase_retry: String,
    pub compress: String,
    pub compress_retry: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts {
            prior: include_str!("../assets/prompts/prior.txt").into(),
            generate: include_str!("../assets/prompts/generate.txt").into(),
            repair: include_str!("../assets/prompts/repair.txt").into(),
            decompose: include_str!("../assets/prompts/decompose.txt").into(),
            decompose_retry: include_str!("../assets/prompts/decompose_retry.txt").into(),
            paraphrase: include_str!("../assets/prompts/paraphrase.txt").into(),
            paraphrase_retry: include_str!("../assets/prompts/paraphrase_retry.txt").into(),
            compress: include_str!("../assets/prompts/compress.txt").into(),
            compress_retry: include_str!("../assets/prompts/compress_retry.txt").into(),
        }
    }
}

impl Prompts {
    /// Built-in prompts, overridden by any `<name>.txt` present in `dir`.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut p = Prompts::default();
        let slots: [(&str, &mut String); 9] = [
            ("prior", &mut p.prior),
            ("generate", &mut p.generate),
            ("repair", &mut p.repair),
            ("decompose", &mut p.decompose),
            ("decompose_retry", &mut p.decompose_retry),
            ("paraphrase", &mut p.paraphrase),
            ("paraphrase_retry", &mut p.paraphrase_retry),
            ("compress", &mut p.compress),
            ("compress_retry", &mut p.compress_retry),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(p)
    }

    /// The version line of every prompt.
    pub fn versions(&self) -> Vec<String> {
        [
            &self.prior,
            &self.generate,
            &self.repair,
            &self.decompose,
            &self.decompose_retry,
            &self.paraphrase,
            &self.paraphrase_retry,
            &self.compress,
            &self.compress_retry,
        ]
        .iter()
        .map(|t| t.lines().next().unwrap_or("").trim().to_string())
        .collect()
    }
}

/// Replaces each `{{name}}` with its value.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{{{name}}}}}",), value);
    }
    out
}

/// The outermost JSON object or array in a model reply, ignoring any
/// surrounding prose or code fences.
pub fn json_body(text: &str) -> Option<&str> {
    let start = text.find(['{', '['])?;
    let close = if text[start..].starts_with('{') { '}' } else { ']' };
    let end = text.rfind(close)?;
    (end > start).then(|| &text[start..=end])
}

/// Bullet list, or `(none)`.
pub fn bullets<I: IntoIterator<Item = String>>(items: I) -> String {
    let lines: Vec<String> = items.into_iter().map(|s| format!("- {s}")).collect();
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_replaces_all() {
        assert_eq!(fill("a {{x}} b {{x}} {{y}}", &[("x", "1"), ("y", "2")]), "a 1 b 1 2");
    }

    #[test]
    fn json_body_strips_prose() {
        assert_eq!(json_body("sure:\n```json\n{\"a\": [1]}\n```"), Some("{\"a\": [1]}"));
        assert_eq!(json_body("[1, 2] done"), Some("[1, 2]"));
        assert_eq!(json_body("nothing"), None);
    }

    #[test]
    fn every_prompt_is_versioned() {
        for v in Prompts::default().versions() {
            assert!(v.starts_with("prompt: ") && v.contains("-v"), "{v}");
        }
    }
}
