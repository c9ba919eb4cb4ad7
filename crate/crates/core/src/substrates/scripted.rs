use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::env::Observation;
use crate::{MrdgError, Result};

/// Fixed behaviour schemes. Action 0 is "cooperate" (stag, cooperate, dove)
/// and action 1 is "defect".
///
/// Text form: `always:<a>`, `tit-for-tat`, `random:<p0>,<p1>,...`,
/// `grim-trigger`, `alternator:<first>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScriptedKind {
    Always(usize),
    TitForTat,
    Random(Vec<f64>),
    GrimTrigger,
    Alternator(usize),
}

impl ScriptedKind {
    pub fn validate(&self, actions: usize) -> Result<()> {
        let bad = |m: String| Err(MrdgError::Config(m));
        match self {
            ScriptedKind::Always(a) | ScriptedKind::Alternator(a) if *a >= actions => {
                bad(format!("{self}: action out of range for {actions} actions"))
            }
            ScriptedKind::Alternator(_) | ScriptedKind::TitForTat | ScriptedKind::GrimTrigger if actions < 2 => {
                bad(format!("{self} needs at least 2 actions"))
            }
            ScriptedKind::Random(p) => {
                if p.len() != actions {
                    return bad(format!("{self}: expected {actions} probabilities"));
                }
                if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad(format!("{self}: probabilities must be >= 0 and sum to 1"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ScriptedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScriptedKind::Always(a) => write!(f, "always:{a}"),
            ScriptedKind::TitForTat => write!(f, "tit-for-tat"),
            ScriptedKind::Random(p) => {
                let parts: Vec<String> = p.iter().map(|x| x.to_string()).collect();
                write!(f, "random:{}", parts.join(","))
            }
            ScriptedKind::GrimTrigger => write!(f, "grim-trigger"),
            ScriptedKind::Alternator(a) => write!(f, "alternator:{a}"),
        }
    }
}

impl FromStr for ScriptedKind {
    type Err = MrdgError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let index = |a: Option<&str>| -> Result<usize> {
            a.ok_or_else(|| MrdgError::Config(format!("{s:?} needs an action index")))?
                .trim()
                .parse()
                .map_err(|_| MrdgError::Config(format!("bad action index in {s:?}")))
        };
        match head {
            "always" => Ok(ScriptedKind::Always(index(arg)?)),
            "tit-for-tat" | "tft" => Ok(ScriptedKind::TitForTat),
            "grim-trigger" | "grim" => Ok(ScriptedKind::GrimTrigger),
            "alternator" => Ok(ScriptedKind::Alternator(arg.map_or(Ok(0), |a| index(Some(a)))?)),
            "random" => {
                let arg = arg.ok_or_else(|| MrdgError::Config(format!("{s:?} needs probabilities")))?;
                let p = arg
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| MrdgError::Config(format!("bad probabilities in {s:?}")))?;
                Ok(ScriptedKind::Random(p))
            }
            _ => Err(MrdgError::Config(format!("unknown scripted policy {s:?}"))),
        }
    }
}

impl TryFrom<String> for ScriptedKind {
    type Error = MrdgError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScriptedKind> for String {
    fn from(k: ScriptedKind) -> String {
        k.to_string()
    }
}

/// A scripted policy with its per-episode state.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedPolicy {
    kind: ScriptedKind,
    triggered: bool,
}

impl ScriptedPolicy {
    pub fn new(kind: ScriptedKind, actions: usize) -> Result<Self> {
        kind.validate(actions)?;
        Ok(Self { kind, triggered: false })
    }

    pub fn kind(&self) -> &ScriptedKind {
        &self.kind
    }

    pub fn reset(&mut self) {
        self.triggered = false;
    }

    pub fn act<R: Rng + ?Sized>(&mut self, observation: &Observation, rng: &mut R) -> usize {
        match &self.kind {
            ScriptedKind::Always(a) => *a,
            ScriptedKind::TitForTat => observation.last_opponent.unwrap_or(0),
            ScriptedKind::GrimTrigger => {
                if observation.last_opponent.is_some_and(|a| a != 0) {
                    self.triggered = true;
                }
                usize::from(self.triggered)
            }
            ScriptedKind::Alternator(first) => match observation.own_last {
                None => *first,
                Some(0) => 1,
                Some(_) => 0,
            },
            ScriptedKind::Random(p) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (a, &pa) in p.iter().enumerate() {
                    acc += pa;
                    if u < acc {
                        return a;
                    }
                }
                p.iter().rposition(|&pa| pa > 0.0).unwrap_or(0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn obs(own: Option<usize>, opp: Option<usize>) -> Observation {
        Observation {
            vector: vec![],
            own_last: own,
            last_opponent: opp,
        }
    }

    #[test]
    fn examples() {
        let mut r = rng::stream(0, "t");
        let mut tft = ScriptedPolicy::new(ScriptedKind::TitForTat, 2).unwrap();
        assert_eq!(tft.act(&obs(None, None), &mut r), 0);
        assert_eq!(tft.act(&obs(Some(0), Some(1)), &mut r), 1);
        let mut stag = ScriptedPolicy::new(ScriptedKind::Always(0), 2).unwrap();
        assert_eq!(stag.act(&obs(Some(1), Some(1)), &mut r), 0);
        let mut degenerate = ScriptedPolicy::new(ScriptedKind::Random(vec![1.0, 0.0]), 2).unwrap();
        assert!((0..1000).all(|_| degenerate.act(&obs(None, None), &mut r) == 0));
    }

    #[test]
    fn grim_trigger_never_forgives() {
        let mut r = rng::stream(0, "t");
        let mut g = ScriptedPolicy::new(ScriptedKind::GrimTrigger, 2).unwrap();
        assert_eq!(g.act(&obs(None, None), &mut r), 0);
        assert_eq!(g.act(&obs(Some(0), Some(1)), &mut r), 1);
        assert_eq!(g.act(&obs(Some(1), Some(0)), &mut r), 1);
        g.reset();
        assert_eq!(g.act(&obs(None, None), &mut r), 0);
    }

    #[test]
    fn alternator_alternates() {
        let mut r = rng::stream(0, "t");
        let mut a = ScriptedPolicy::new(ScriptedKind::Alternator(1), 2).unwrap();
        assert_eq!(a.act(&obs(None, None), &mut r), 1);
        assert_eq!(a.act(&obs(Some(1), None), &mut r), 0);
        assert_eq!(a.act(&obs(Some(0), None), &mut r), 1);
    }

    #[test]
    fn parse_round_trip_and_validation() {
        for s in ["always:1", "tit-for-tat", "random:0.25,0.75", "grim-trigger", "alternator:0"] {
            let k: ScriptedKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("always".parse::<ScriptedKind>().is_err());
        assert!("bogus".parse::<ScriptedKind>().is_err());
        assert!(ScriptedPolicy::new(ScriptedKind::Always(2), 2).is_err());
        assert!(ScriptedPolicy::new(ScriptedKind::Random(vec![0.5, 0.6]), 2).is_err());
    }

    #[test]
    fn random_policy_frequencies() {
        let mut r = rng::stream(5, "t");
        let mut p = ScriptedPolicy::new(ScriptedKind::Random(vec![0.2, 0.8]), 2).unwrap();
        let n = 20_000;
        let ones = (0..n).filter(|_| p.act(&obs(None, None), &mut r) == 1).count() as f64;
        let sigma = (n as f64 * 0.2 * 0.8).sqrt();
        assert!((ones - 0.8 * n as f64).abs() < 4.0 * sigma);
    }
}
