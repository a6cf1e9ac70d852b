use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    check_request, enforce_budget, normalize_whitespace, LanguageModel, ModelError, ModelRequest, ModelResponse, Role,
};

/// One canned response.
///
/// Matches when the role agrees, the request key equals `key` after
/// whitespace/case normalization (`*` matches any key), every `requires`
/// substring occurs in the prompt and no `forbids` substring does.
/// `{{key}}` in the response is replaced by the request key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub role: Role,
    pub key: String,
    #[serde(default)]
    pub requires: Vec<String>,
    #[serde(default)]
    pub forbids: Vec<String>,
    pub response: String,
}

#[derive(Debug, Deserialize)]
struct FixtureFile {
    #[serde(default)]
    fixture: Vec<Fixture>,
}

fn norm_key(s: &str) -> String {
    normalize_whitespace(s).to_lowercase()
}

impl Fixture {
    fn matches(&self, request: &ModelRequest, key: &str, prompt: &str) -> bool {
        self.role == request.role
            && (self.key == "*" || norm_key(&self.key) == key)
            && self.requires.iter().all(|r| prompt.contains(r.as_str()))
            && !self.forbids.iter().any(|f| prompt.contains(f.as_str()))
    }
}

/// Deterministic fixture-table backend; the first matching fixture wins.
#[derive(Debug, Clone, Default)]
pub struct ScriptedModel {
    fixtures: Vec<Fixture>,
}

impl ScriptedModel {
    pub fn new(fixtures: Vec<Fixture>) -> Self {
        ScriptedModel { fixtures }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let f: FixtureFile = toml::from_str(text).map_err(|e| e.to_string())?;
        Ok(ScriptedModel::new(f.fixture))
    }

    /// Loads every `*.toml` in `dir`, in file-name order.
    pub fn from_dir(dir: &Path) -> Result<Self, String> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| format!("{}: {e}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        let mut model = ScriptedModel::default();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            let more = ScriptedModel::from_toml(&text).map_err(|e| format!("{}: {e}", p.display()))?;
            model.fixtures.extend(more.fixtures);
        }
        Ok(model)
    }

    /// Adds fixtures that take precedence over the existing ones.
    pub fn prepend(&mut self, fixtures: Vec<Fixture>) {
        let mut all = fixtures;
        all.append(&mut self.fixtures);
        self.fixtures = all;
    }

    pub fn push(&mut self, fixture: Fixture) {
        self.fixtures.push(fixture);
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl LanguageModel for ScriptedModel {
    fn backend_id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ModelError> {
        check_request(request)?;
        let raw_key = request.lookup_key().unwrap_or_default();
        let key = norm_key(&raw_key);
        let prompt = request.prompt_text();
        let fixture = self
            .fixtures
            .iter()
            .find(|f| f.matches(request, &key, &prompt))
            .ok_or_else(|| ModelError::FixtureMissing { role: request.role, key: raw_key.clone() })?;
        let (text, truncated) = enforce_budget(fixture.response.replace("{{key}}", &raw_key), request.budget);
        Ok(ModelResponse { text, backend_id: self.backend_id(), latency: Duration::ZERO, truncated })
    }
}
