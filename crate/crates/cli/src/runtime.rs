//! Everything a command needs: task suite, model backend, embedder, prompts
//! and the resolved configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, ValueEnum};
use memo_core::config::Config;
use memo_core::embedding::{Embedder, HashingEmbedder};
use memo_core::model::{LanguageModel, Recording, RecordingModel, RemoteConfig, RemoteModel, ReplayModel};
use memo_core::policy::{scripted_model, Policy};
use memo_core::prompts::Prompts;
use memo_core::simenv::TaskSuite;
use memo_core::skillbook::{Header, Skillbook};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    #[default]
    /// Canned responses from fixture files plus the suite's reference programs.
    Scripted,
    /// Chat-completions endpoint from `MEMO_MODEL_URL`.
    Remote,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Configuration file (defaults apply when absent).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Task directory; defaults to the bundled suite.
    #[arg(long, global = true)]
    pub tasks: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = ModelKind::Scripted)]
    pub model: ModelKind,
    /// Fixture directory for the scripted model; defaults to the bundled fixtures.
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    /// Prompt directory overriding the built-in prompts.
    #[arg(long, global = true)]
    pub prompts: Option<PathBuf>,
    /// Record every model exchange to this file.
    #[arg(long, global = true, conflicts_with = "replay")]
    pub record: Option<PathBuf>,
    /// Answer model requests from a recording instead of a backend.
    #[arg(long, global = true)]
    pub replay: Option<PathBuf>,
}

type Recorder = RecordingModel<Box<dyn LanguageModel>>;

pub struct Runtime {
    pub suite: TaskSuite,
    pub model: Arc<dyn LanguageModel>,
    pub embedder: HashingEmbedder,
    pub prompts: Prompts,
    pub config: Config,
    recorder: Option<(Arc<Recorder>, PathBuf)>,
}

impl Runtime {
    pub fn from_args(args: &CommonArgs) -> Result<Self, String> {
        let config = match &args.config {
            Some(p) => Config::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
            None => Config::default(),
        };
        let tasks = args.tasks.clone().unwrap_or_else(|| memo_core::asset_dir().join("tasks"));
        let suite = TaskSuite::load_dir(&tasks).map_err(|e| e.to_string())?;
        Self::with_suite(args, suite, config)
    }

    pub fn with_suite(args: &CommonArgs, suite: TaskSuite, config: Config) -> Result<Self, String> {
        let prompts = match &args.prompts {
            Some(d) => Prompts::load_dir(d).map_err(|e| format!("{}: {e}", d.display()))?,
            None => Prompts::default(),
        };
        let backend: Box<dyn LanguageModel> = if let Some(path) = &args.replay {
            let rec = Recording::import(path).map_err(|e| format!("{}: {e}", path.display()))?;
            Box::new(ReplayModel::new(rec))
        } else {
            match args.model {
                ModelKind::Scripted => {
                    let dir = args.fixtures.clone().unwrap_or_else(|| memo_core::asset_dir().join("fixtures"));
                    Box::new(scripted_model(&dir, &suite)?)
                }
                ModelKind::Remote => {
                    let cfg = RemoteConfig::from_env()
                        .ok_or_else(|| format!("remote model needs {} to be set", memo_core::model::URL_ENV))?;
                    Box::new(RemoteModel::new(cfg).map_err(|e| e.to_string())?)
                }
            }
        };
        let (model, recorder): (Arc<dyn LanguageModel>, _) = match &args.record {
            Some(path) => {
                let r = Arc::new(RecordingModel::new(backend));
                (r.clone(), Some((r, path.clone())))
            }
            None => (Arc::new(backend), None),
        };
        Ok(Runtime {
            suite,
            model,
            embedder: HashingEmbedder::new(config.embedding_dimension),
            prompts,
            config,
            recorder,
        })
    }

    pub fn header(&self) -> Header {
        Header::new(self.embedder.id(), self.embedder.dimension())
    }

    /// File-backed book at `path`, created on first use.
    pub fn open_book(&self, path: &Path) -> Result<Skillbook, String> {
        Skillbook::open(path, &self.header()).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn policy(&self, retrieval: bool) -> Policy<'_> {
        let p = Policy::new(&*self.model, &self.embedder, &self.prompts, self.config);
        if retrieval {
            p
        } else {
            p.without_retrieval()
        }
    }

    /// Writes the model recording, if one was requested.
    pub fn finish(&self) -> Result<(), String> {
        if let Some((rec, path)) = &self.recorder {
            rec.export(path).map_err(|e| format!("{}: {e}", path.display()))?;
        }
        Ok(())
    }
}
