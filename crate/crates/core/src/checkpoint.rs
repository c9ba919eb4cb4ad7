//! Versioned binary checkpoints. The byte layout is documented in
//! `docs/checkpoint-format.md`; all integers and reals are little-endian.

use std::path::Path;

use crate::config::RunConfig;
use crate::dpp::PolicyPool;
use crate::learner::{Ablation, EpisodeContext, MrdgAgent, Trainer};
use crate::{MrdgError, Result};

pub const MAGIC: &[u8; 8] = b"MRDGCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum RecordData {
    F64(Vec<f64>),
    U64(Vec<u64>),
    Text(String),
}

impl RecordData {
    fn kind(&self) -> u8 {
        match self {
            RecordData::F64(_) => 0,
            RecordData::U64(_) => 1,
            RecordData::Text(_) => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub config_toml: String,
    pub episode: u64,
    pub records: Vec<(String, RecordData)>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| MrdgError::Checkpoint(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| MrdgError::Checkpoint("invalid UTF-8 text".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        put_str(&mut out, &self.config_hash);
        put_str(&mut out, &self.config_toml);
        out.extend(self.episode.to_le_bytes());
        out.extend((self.records.len() as u32).to_le_bytes());
        for (name, data) in &self.records {
            put_str(&mut out, name);
            out.push(data.kind());
            match data {
                RecordData::F64(v) => {
                    out.extend((v.len() as u64).to_le_bytes());
                    v.iter().for_each(|x| out.extend(x.to_le_bytes()));
                }
                RecordData::U64(v) => {
                    out.extend((v.len() as u64).to_le_bytes());
                    v.iter().for_each(|x| out.extend(x.to_le_bytes()));
                }
                RecordData::Text(s) => {
                    out.extend((s.len() as u64).to_le_bytes());
                    out.extend(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(8).ok() != Some(MAGIC.as_slice()) {
            return Err(MrdgError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(MrdgError::Checkpoint(format!(
                "checkpoint format version {version} is not supported (this build reads version {VERSION})"
            )));
        }
        let config_hash = r.string()?;
        let config_toml = r.string()?;
        let episode = r.u64()?;
        let n = r.u32()? as usize;
        let mut records = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let kind = r.u8()?;
            let count = usize::try_from(r.u64()?).map_err(|_| MrdgError::Checkpoint("record too large".into()))?;
            let width = if kind == 2 { 1 } else { 8 };
            let bytes = r.take(count.checked_mul(width).ok_or_else(|| MrdgError::Checkpoint("record too large".into()))?)?;
            let data = match kind {
                0 => RecordData::F64(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect()),
                1 => RecordData::U64(bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8"))).collect()),
                2 => RecordData::Text(
                    String::from_utf8(bytes.to_vec()).map_err(|_| MrdgError::Checkpoint(format!("record {name}: invalid UTF-8")))?,
                ),
                k => return Err(MrdgError::Checkpoint(format!("record {name}: unknown kind {k}"))),
            };
            records.push((name, data));
        }
        if r.pos != data.len() {
            return Err(MrdgError::Checkpoint("trailing bytes after the last record".into()));
        }
        Ok(Self {
            config_hash,
            config_toml,
            episode,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn get(&self, name: &str) -> Option<&RecordData> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match self.get(name) {
            Some(RecordData::F64(v)) => Ok(v),
            _ => Err(MrdgError::Checkpoint(format!("missing real-valued record {name:?}"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(RecordData::Text(s)) => Ok(s),
            _ => Err(MrdgError::Checkpoint(format!("missing text record {name:?}"))),
        }
    }

    /// Parses the embedded config and checks it against the recorded hash.
    pub fn config(&self) -> Result<RunConfig> {
        let cfg = RunConfig::from_toml(&self.config_toml)?;
        if cfg.hash() != self.config_hash {
            return Err(MrdgError::Checkpoint("config hash does not match the embedded config".into()));
        }
        Ok(cfg)
    }
}

fn agent_records(agent: &MrdgAgent) -> Vec<(String, RecordData)> {
    let mut out = Vec::new();
    let pv = agent.online.params.vector();
    for seg in pv.segments() {
        let learned_hype = seg.name.starts_with("hype/") && agent.online.hyper.is_none();
        if seg.name.starts_with("marl/") || learned_hype {
            let data = pv.segment(&seg.name).expect("segment exists").to_vec();
            out.push((format!("learner/{}", seg.name), RecordData::F64(data)));
        }
    }
    if let Some(h) = &agent.online.hyper {
        out.push(("hyper/params".into(), RecordData::F64(h.params.clone())));
    }
    out.push(("retrieval/params".into(), RecordData::F64(agent.retrieval.params.clone())));
    for enc in &agent.va {
        out.push((format!("va/{}", enc.agent_id), RecordData::F64(enc.params.clone())));
    }
    out
}

fn memory_records(ctx: &EpisodeContext) -> Vec<(String, RecordData)> {
    let mut out = Vec::new();
    let agents: Vec<usize> = ctx.memory.agents().collect();
    for id in agents {
        let entries: Vec<_> = ctx.memory.entries(id).collect();
        let emb = entries.iter().flat_map(|e| e.embedding.iter().copied()).collect();
        out.push((format!("memory/{id}/embeddings"), RecordData::F64(emb)));
        out.push((format!("memory/{id}/actions"), RecordData::U64(entries.iter().map(|e| e.action as u64).collect())));
        out.push((format!("memory/{id}/times"), RecordData::U64(entries.iter().map(|e| e.time).collect())));
    }
    out
}

/// Snapshot of a trainer's learned state.
pub fn capture(trainer: &Trainer) -> Checkpoint {
    let cfg = trainer.config();
    let mut records = agent_records(&trainer.agent);
    records.push(("dpp/pool".into(), RecordData::Text(trainer.pool.to_json())));
    if let Some(ctx) = trainer.memory() {
        records.extend(memory_records(ctx));
    }
    Checkpoint {
        config_hash: cfg.hash(),
        config_toml: cfg.to_toml(),
        episode: trainer.episode() as u64,
        records,
    }
}

/// Rebuilds the agent and pool stored in a checkpoint.
pub fn restore(ckpt: &Checkpoint) -> Result<(RunConfig, MrdgAgent, PolicyPool)> {
    let cfg = ckpt.config()?;
    let ablation = Ablation {
        no_pe: cfg.ablation.no_pe,
        no_hn: cfg.ablation.no_hn,
        no_va: cfg.ablation.no_va,
    };
    let mut agent = MrdgAgent::new(&cfg, cfg.run.seed, ablation)?;
    let names: Vec<String> = agent.online.params.vector().segments().iter().map(|s| s.name.clone()).collect();
    for name in names {
        let stored = name.starts_with("marl/") || agent.online.hyper.is_none();
        if stored {
            let values = ckpt.f64s(&format!("learner/{name}"))?;
            agent.online.params.vector_mut().write(&name, values)?;
        }
    }
    let copy_into = |dst: &mut Vec<f64>, name: &str| -> Result<()> {
        let src = ckpt.f64s(name)?;
        if src.len() != dst.len() {
            return Err(MrdgError::Checkpoint(format!("record {name:?} has {} values, expected {}", src.len(), dst.len())));
        }
        dst.copy_from_slice(src);
        Ok(())
    };
    if let Some(h) = agent.online.hyper.as_mut() {
        copy_into(&mut h.params, "hyper/params")?;
    }
    copy_into(&mut agent.retrieval.params, "retrieval/params")?;
    for enc in agent.va.iter_mut() {
        copy_into(&mut enc.params, &format!("va/{}", enc.agent_id))?;
    }
    agent.online.hyper_updated();
    agent.refresh_target();
    let pool = PolicyPool::from_json(ckpt.text("dpp/pool")?)?;
    Ok((cfg, agent, pool))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config_hash: "abc".into(),
            config_toml: "[run]\n".into(),
            episode: 7,
            records: vec![
                ("a".into(), RecordData::F64(vec![1.5, -0.0, f64::MIN_POSITIVE])),
                ("b".into(), RecordData::U64(vec![3, u64::MAX])),
                ("c".into(), RecordData::Text("{\"x\":1}".into())),
            ],
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn refuses_other_versions_and_corruption() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 2;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
        let good = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&good[..good.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }
}
