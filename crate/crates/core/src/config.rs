//! Run configuration: a TOML document with the sections `substrate`,
//! `learner`, `mrdg`, `dpp`, `eval`, `run` and `ablation`. Every key has a
//! default, unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::PeBase;
use crate::learner::AdaptedLayers;
use crate::memory::Metric;
use crate::numerics::{Activation, Matrix, OptimizerKind};
use crate::substrates::{Pairing, PayoffMatrix, ScriptedKind, SubstrateSpec};
use crate::{MrdgError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub substrate: SubstrateConfig,
    pub learner: LearnerConfig,
    pub mrdg: MrdgConfig,
    pub dpp: DppConfig,
    pub eval: EvalConfig,
    pub run: RunSection,
    pub ablation: AblationFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubstrateConfig {
    /// Built-in game name, used unless both payoff overrides are given.
    pub game: String,
    /// Row-major square matrices overriding the built-in payoffs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row_payoff: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub col_payoff: Option<Vec<Vec<f64>>>,
    pub n_agents: usize,
    pub history: usize,
    pub episode_length: usize,
    pub pairing: Pairing,
}

impl Default for SubstrateConfig {
    fn default() -> Self {
        Self {
            game: "stag-hunt".into(),
            row_payoff: None,
            col_payoff: None,
            n_agents: 2,
            history: 3,
            episode_length: 10,
            pairing: Pairing::Fixed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub gamma: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Episodes between target-network refreshes.
    pub target_period: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of all training steps over which epsilon is annealed.
    pub epsilon_anneal_fraction: f64,
    pub adapted_layers: AdaptedLayers,
    /// Environment steps between TD updates.
    pub train_every: usize,
    /// Transitions collected before the first TD update.
    pub warmup: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            activation: Activation::Relu,
            gamma: 0.9,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            batch_size: 64,
            buffer_capacity: 50_000,
            target_period: 100,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_fraction: 0.2,
            adapted_layers: AdaptedLayers::Second,
            train_every: 1,
            warmup: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrdgConfig {
    /// Number of memory entries retrieved per partner.
    pub m: usize,
    pub memory_capacity: usize,
    pub reset_memory_each_episode: bool,
    pub embedding_width: usize,
    pub va_hidden: Vec<usize>,
    pub va_learning_rate: f64,
    pub retrieval_hidden: Vec<usize>,
    pub retrieval_index_width: usize,
    pub retrieval_metric: Metric,
    pub retrieval_learning_rate: f64,
    pub aux_max_entries: usize,
    /// Width of the positional code and of the action one-hot fed to the
    /// hypernetwork; 0 means the action count rounded up to even.
    pub pe_width: usize,
    pub pe_base: PeBase,
    pub hyper_hidden: Vec<usize>,
    pub hyper_learning_rate: f64,
    /// Episodes between re-initializations; 0 disables them.
    pub reinit_period: usize,
    pub reinit_lambda: f64,
    pub reinit_gamma: f64,
}

impl Default for MrdgConfig {
    fn default() -> Self {
        Self {
            m: 5,
            memory_capacity: 10_000,
            reset_memory_each_episode: true,
            embedding_width: 16,
            va_hidden: vec![128, 64],
            va_learning_rate: 1e-3,
            retrieval_hidden: vec![128, 128],
            retrieval_index_width: 32,
            retrieval_metric: Metric::Euclidean,
            retrieval_learning_rate: 1e-3,
            aux_max_entries: 256,
            pe_width: 0,
            pe_base: PeBase::Width,
            hyper_hidden: vec![128, 128],
            hyper_learning_rate: 1e-3,
            reinit_period: 200,
            reinit_lambda: 0.8,
            reinit_gamma: 0.2,
        }
    }
}

/// One coordination scheme: the game it is played on and one policy per
/// partner (a single entry is used for every partner). The policy string
/// `learned` stands for a co-trained Q-learning partner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<String>,
    pub partners: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DppConfig {
    /// 0 means unbounded.
    pub max_entries_per_slot: usize,
    pub schemes: Vec<SchemeConfig>,
}

impl Default for DppConfig {
    fn default() -> Self {
        let scheme = |p: &str| SchemeConfig {
            game: None,
            partners: vec![p.to_string()],
        };
        Self {
            max_entries_per_slot: 0,
            schemes: vec![scheme("always:0"), scheme("always:1"), scheme("tit-for-tat")],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub partners: Vec<ScriptedKind>,
    pub episodes: usize,
    /// Training episodes between metrics rows.
    pub interval: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            partners: vec![ScriptedKind::Always(0)],
            episodes: 10,
            interval: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub episodes: usize,
    pub output_dir: String,
    /// When false the `wallclock_s` column is written as 0 so that runs are
    /// byte-reproducible.
    pub record_wallclock: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 1000,
            output_dir: "runs/default".into(),
            record_wallclock: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub no_dpp: bool,
    pub no_pe: bool,
    pub no_hn: bool,
    pub no_va: bool,
    /// Seeds used by the ablation command.
    pub seeds: Vec<u64>,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            no_dpp: false,
            no_pe: false,
            no_hn: false,
            no_va: false,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// A partner entry of a scheme.
#[derive(Clone, Debug, PartialEq)]
pub enum PartnerSpec {
    Scripted(ScriptedKind),
    Learned,
}

impl PartnerSpec {
    pub fn parse(s: &str) -> Result<Self> {
        if s.trim() == "learned" {
            Ok(PartnerSpec::Learned)
        } else {
            Ok(PartnerSpec::Scripted(s.parse()?))
        }
    }
}

impl RunConfig {
    /// Parses TOML text; errors carry the line and column of the problem.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| MrdgError::Config(describe_toml_error(text, &e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            MrdgError::Config(m) => MrdgError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn payoff_for(&self, game: &str) -> Result<PayoffMatrix> {
        if game == self.substrate.game {
            if let (Some(r), Some(c)) = (&self.substrate.row_payoff, &self.substrate.col_payoff) {
                let to_matrix = |rows: &Vec<Vec<f64>>| {
                    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
                    Matrix::from_rows(&refs)
                };
                return PayoffMatrix::new(game, to_matrix(r)?, to_matrix(c)?);
            }
        }
        PayoffMatrix::by_name(game)
    }

    pub fn substrate_spec(&self, game: &str) -> Result<SubstrateSpec> {
        SubstrateSpec::new(
            self.payoff_for(game)?,
            self.substrate.n_agents,
            self.substrate.episode_length,
            self.substrate.history,
            self.substrate.pairing,
        )
    }

    /// The game a scheme is played on.
    pub fn scheme_game<'a>(&'a self, scheme: &'a SchemeConfig) -> &'a str {
        scheme.game.as_deref().unwrap_or(&self.substrate.game)
    }

    /// One partner spec per uncontrollable agent.
    pub fn scheme_partners(&self, scheme: &SchemeConfig) -> Result<Vec<PartnerSpec>> {
        let n = self.substrate.n_agents - 1;
        let parsed = scheme.partners.iter().map(|s| PartnerSpec::parse(s)).collect::<Result<Vec<_>>>()?;
        match parsed.len() {
            1 => Ok(vec![parsed[0].clone(); n]),
            k if k == n => Ok(parsed),
            k => Err(MrdgError::Config(format!(
                "a scheme lists {k} partners but there are {n} uncontrollable agents"
            ))),
        }
    }

    /// Positional code (and padded action one-hot) width.
    pub fn pe_width(&self) -> Result<usize> {
        let a = self.payoff_for(&self.substrate.game)?.actions();
        Ok(if self.mrdg.pe_width == 0 { a + a % 2 } else { self.mrdg.pe_width })
    }

    pub fn total_steps(&self) -> usize {
        self.run.episodes * self.substrate.episode_length
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MrdgError::Config(m.to_string()));
        let base = self.substrate_spec(&self.substrate.game)?;
        let actions = base.actions();
        let l = &self.learner;
        if !(l.gamma > 0.0 && l.gamma < 1.0) {
            return bad("learner.gamma must lie in (0, 1)");
        }
        if !(l.learning_rate > 0.0) {
            return bad("learner.learning_rate must be > 0");
        }
        for (name, e) in [("epsilon_start", l.epsilon_start), ("epsilon_end", l.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(MrdgError::Config(format!("learner.{name} must lie in [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&l.epsilon_anneal_fraction) {
            return bad("learner.epsilon_anneal_fraction must lie in [0, 1]");
        }
        if l.batch_size == 0 || l.buffer_capacity == 0 || l.target_period == 0 || l.train_every == 0 {
            return bad("learner batch_size, buffer_capacity, target_period and train_every must be >= 1");
        }
        if l.hidden.len() < l.adapted_layers.indices().len() {
            return bad("learner.hidden has too few layers for the adapted-layer choice");
        }
        if l.hidden.iter().any(|&h| h == 0) {
            return bad("learner.hidden widths must be >= 1");
        }
        let m = &self.mrdg;
        if m.m == 0 || m.memory_capacity == 0 || m.embedding_width == 0 || m.retrieval_index_width == 0 {
            return bad("mrdg m, memory_capacity, embedding_width and retrieval_index_width must be >= 1");
        }
        if m.aux_max_entries == 0 {
            return bad("mrdg.aux_max_entries must be >= 1");
        }
        for (name, lr) in [
            ("va_learning_rate", m.va_learning_rate),
            ("retrieval_learning_rate", m.retrieval_learning_rate),
            ("hyper_learning_rate", m.hyper_learning_rate),
        ] {
            if !(lr > 0.0) {
                return Err(MrdgError::Config(format!("mrdg.{name} must be > 0")));
            }
        }
        let pe = self.pe_width()?;
        if pe < actions || pe % 2 != 0 {
            return bad("mrdg.pe_width must be even and at least the action count");
        }
        if !(m.reinit_lambda >= 0.0 && m.reinit_gamma >= 0.0) {
            return bad("mrdg.reinit_lambda and reinit_gamma must be >= 0");
        }
        if self.dpp.schemes.is_empty() && !self.ablation.no_dpp {
            return bad("dpp.schemes must list at least one scheme");
        }
        for scheme in &self.dpp.schemes {
            let spec = self.substrate_spec(self.scheme_game(scheme))?;
            if spec.actions() != actions {
                return bad("every scheme's game must have the same action count");
            }
            for p in self.scheme_partners(scheme)? {
                if let PartnerSpec::Scripted(k) = p {
                    k.validate(actions)?;
                }
            }
        }
        for k in &self.eval.partners {
            k.validate(actions)?;
        }
        if self.eval.interval == 0 {
            return bad("eval.interval must be >= 1");
        }
        if self.eval.episodes == 0 {
            return bad("eval.episodes must be >= 1");
        }
        Ok(())
    }
}

fn describe_toml_error(text: &str, err: &toml::de::Error) -> String {
    let msg = err.message();
    match err.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {msg}")
        }
        None => msg.to_string(),
    }
}
