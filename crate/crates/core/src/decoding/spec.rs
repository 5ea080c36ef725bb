use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoding algorithm. String form: `greedy`, `top-k:K`, `nucleus:MU`, `beam:K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DecoderKind {
    Greedy,
    TopK(usize),
    Nucleus(f64),
    Beam(usize),
}

impl DecoderKind {
    pub fn is_sampling(&self) -> bool {
        matches!(self, DecoderKind::TopK(_) | DecoderKind::Nucleus(_))
    }

    fn validate(self, text: &str) -> Result<Self> {
        let fail = |reason: &str| {
            Err(Error::DecoderSpec {
                spec: text.to_string(),
                reason: reason.to_string(),
            })
        };
        match self {
            DecoderKind::TopK(0) | DecoderKind::Beam(0) => fail("k must be at least 1"),
            DecoderKind::Nucleus(mu) if !(mu > 0.0 && mu <= 1.0) => fail("mu must lie in (0, 1]"),
            k => Ok(k),
        }
    }
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecoderKind::Greedy => write!(f, "greedy"),
            DecoderKind::TopK(k) => write!(f, "top-k:{k}"),
            DecoderKind::Nucleus(mu) => write!(f, "nucleus:{mu}"),
            DecoderKind::Beam(k) => write!(f, "beam:{k}"),
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let text = s.trim();
        let err = |reason: String| Error::DecoderSpec {
            spec: s.to_string(),
            reason,
        };
        let (name, arg) = match text.split_once(':') {
            Some((n, a)) => (n, Some(a.trim())),
            None => (text, None),
        };
        let count = |a: Option<&str>| -> Result<usize> {
            let a = a.ok_or_else(|| err("missing integer argument".into()))?;
            a.parse().map_err(|_| err(format!("{a:?} is not a non-negative integer")))
        };
        let kind = match name.to_ascii_lowercase().as_str() {
            "greedy" if arg.is_none() => DecoderKind::Greedy,
            "greedy" => return Err(err("greedy takes no argument".into())),
            "top-k" | "topk" => DecoderKind::TopK(count(arg)?),
            "beam" => DecoderKind::Beam(count(arg)?),
            "nucleus" => {
                let a = arg.ok_or_else(|| err("missing mu".into()))?;
                DecoderKind::Nucleus(a.parse().map_err(|_| err(format!("{a:?} is not a number")))?)
            }
            other => return Err(err(format!("unknown decoder {other:?}"))),
        };
        kind.validate(s)
    }
}

impl TryFrom<String> for DecoderKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DecoderKind> for String {
    fn from(k: DecoderKind) -> String {
        k.to_string()
    }
}

/// A decoding algorithm plus its length cap and (for sampling) seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub kind: DecoderKind,
    pub cap: usize,
    pub seed: u64,
}

impl DecoderSpec {
    pub fn new(kind: DecoderKind, cap: usize, seed: u64) -> Result<Self> {
        let kind = kind.validate(&kind.to_string())?;
        if cap == 0 {
            return Err(Error::DecoderSpec {
                spec: kind.to_string(),
                reason: "cap must be at least 1".into(),
            });
        }
        Ok(Self { kind, cap, seed })
    }

    pub fn parse(text: &str, cap: usize, seed: u64) -> Result<Self> {
        Self::new(text.parse()?, cap, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_round_trips() {
        for s in ["greedy", "top-k:2", "nucleus:0.4", "beam:4", "nucleus:1"] {
            let k: DecoderKind = s.parse().unwrap();
            assert_eq!(k.to_string().parse::<DecoderKind>().unwrap(), k);
        }
        assert_eq!("top-k:3".parse::<DecoderKind>().unwrap(), DecoderKind::TopK(3));
        assert_eq!(" Beam:2 ".parse::<DecoderKind>().unwrap(), DecoderKind::Beam(2));
    }

    #[test]
    fn invalid_specs_rejected() {
        for s in ["top-k:0", "beam:0", "nucleus:0", "nucleus:1.5", "top-k", "top-k:x", "greedy:1", "sample", ""] {
            assert!(matches!(s.parse::<DecoderKind>(), Err(Error::DecoderSpec { .. })), "{s}");
        }
        assert!(DecoderSpec::parse("greedy", 0, 0).is_err());
        assert!(DecoderSpec::new(DecoderKind::TopK(0), 5, 0).is_err());
    }

    #[test]
    fn serializes_as_string() {
        let spec = DecoderSpec::parse("nucleus:0.2", 10, 3).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"kind":"nucleus:0.2","cap":10,"seed":3}"#);
        assert_eq!(serde_json::from_str::<DecoderSpec>(&json).unwrap(), spec);
    }
}
