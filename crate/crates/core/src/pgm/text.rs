//! Plain-text net files.
//!
//! ```text
//! factornet markov 2
//! factor 0 1 : 1.0000000000000000e0 1.0000000000000000e0 1.0000000000000000e0 2.0137527074704766e0
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{Factor, FactorNet, NetKind, VarId};
use crate::error::{Error, Result};
use crate::math::fmt17;

impl FactorNet {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "factornet {} {}", self.kind().as_str(), self.num_vars()).unwrap();
        for f in self.factors() {
            s.push_str("factor");
            for v in f.scope() {
                write!(s, " {}", v.0).unwrap();
            }
            s.push_str(" :");
            for &t in f.table() {
                write!(s, " {}", fmt17(t)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hl, header) = lines.next().ok_or_else(|| Error::parse(1, "empty net file"))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        let [tag, kind, n] = toks[..] else {
            return Err(Error::parse(hl, "expected `factornet <kind> <num_vars>`"));
        };
        if tag != "factornet" {
            return Err(Error::parse(hl, "expected `factornet` header"));
        }
        let kind = match kind {
            "bayes" => NetKind::Bayes,
            "markov" => NetKind::Markov,
            other => return Err(Error::parse(hl, format!("unknown net kind `{other}`"))),
        };
        let num_vars: usize = n.parse().map_err(|_| Error::parse(hl, "bad variable count"))?;
        let mut factors = Vec::new();
        for (ln, line) in lines {
            let rest = line
                .strip_prefix("factor")
                .ok_or_else(|| Error::parse(ln, "expected `factor` line"))?;
            let (scope, table) = rest
                .split_once(':')
                .ok_or_else(|| Error::parse(ln, "missing `:` separator"))?;
            let scope = scope
                .split_whitespace()
                .map(|t| t.parse::<usize>().map(VarId))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(ln, "bad variable id"))?;
            let table = table
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(ln, "bad table value"))?;
            factors.push(Factor::new(scope, table).map_err(|e| Error::parse(ln, e.to_string()))?);
        }
        FactorNet::new(kind, num_vars, factors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FactorNet::from_text(&text)
    }
}
