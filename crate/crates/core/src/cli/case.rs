//! Case names locating a run in size / resolution / discretization space,
//! e.g. `S256-RD128adap2` or `SRD368`.
//!
//! Grammar: `SRD<int>` or `S<int>[-R<int>][-D<int> | [-]RD<int>][[-]adap<int>]`.
//! An omitted R equals S and an omitted D equals R.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CaseName {
    /// Specimen edge in original voxels.
    pub size: usize,
    /// Image resolution: voxels per edge after resolution coarsening.
    pub resolution: usize,
    /// Uniform finite elements per edge before adaptive coarsening.
    pub discretization: usize,
    pub adaptive_steps: u32,
}

impl CaseName {
    pub fn new(size: usize, resolution: usize, discretization: usize, adaptive_steps: u32) -> Self {
        CaseName {
            size,
            resolution,
            discretization,
            adaptive_steps,
        }
    }

    /// Number of resolution halvings and the element subdivision per voxel.
    pub fn plan(&self) -> Result<(u32, usize)> {
        let bad = |msg: String| Err(Error::Config(format!("case {self}: {msg}")));
        if self.size == 0 || self.resolution == 0 || self.discretization == 0 {
            return bad("sizes must be positive".into());
        }
        if self.size % self.resolution != 0 || !(self.size / self.resolution).is_power_of_two() {
            return bad(format!("R{} must be S{} divided by a power of two", self.resolution, self.size));
        }
        if self.discretization % self.resolution != 0 {
            return bad(format!("D{} must be a multiple of R{}", self.discretization, self.resolution));
        }
        Ok(((self.size / self.resolution).trailing_zeros(), self.discretization / self.resolution))
    }
}

impl fmt::Display for CaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}-R{}-D{}", self.size, self.resolution, self.discretization)?;
        if self.adaptive_steps > 0 {
            write!(f, "adap{}", self.adaptive_steps)?;
        }
        Ok(())
    }
}

struct Cursor<'a> {
    name: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::MalformedCaseName {
            name: self.name.to_string(),
            position: self.pos,
            reason: reason.into(),
        })
    }

    fn rest(&self) -> &str {
        &self.name[self.pos..]
    }

    fn eat(&mut self, token: &str) -> bool {
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn int(&mut self) -> Result<usize> {
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return self.fail("expected an integer");
        }
        let v = match self.rest()[..digits].parse::<usize>() {
            Ok(v) => v,
            Err(_) => return self.fail("integer out of range"),
        };
        if v == 0 {
            return self.fail("value must be positive");
        }
        self.pos += digits;
        Ok(v)
    }
}

pub fn parse_case_name(name: &str) -> Result<CaseName> {
    let mut c = Cursor { name, pos: 0 };
    if c.eat("SRD") {
        let v = c.int()?;
        if !c.rest().is_empty() {
            return c.fail("unexpected trailing text");
        }
        return Ok(CaseName::new(v, v, v, 0));
    }
    if !c.eat("S") {
        return c.fail("expected 'S'");
    }
    let size = c.int()?;
    let mut resolution = None;
    let mut discretization = None;
    let save = c.pos;
    if c.eat("-R") && !c.rest().starts_with('D') {
        resolution = Some(c.int()?);
    } else {
        c.pos = save;
    }
    let save = c.pos;
    if c.eat("-D") {
        discretization = Some(c.int()?);
    } else if (c.eat("-RD") || c.eat("RD")) && resolution.is_none() {
        let v = c.int()?;
        resolution = Some(v);
        discretization = Some(v);
    } else {
        c.pos = save;
    }
    let save = c.pos;
    let mut adaptive_steps = 0;
    if c.eat("-adap") || c.eat("adap") {
        let digits = c.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return c.fail("expected an integer");
        }
        adaptive_steps = match c.rest()[..digits].parse::<u32>() {
            Ok(v) => v,
            Err(_) => return c.fail("integer out of range"),
        };
        c.pos += digits;
    } else {
        c.pos = save;
    }
    if !c.rest().is_empty() {
        return c.fail("unexpected trailing text");
    }
    let resolution = resolution.unwrap_or(size);
    Ok(CaseName::new(size, resolution, discretization.unwrap_or(resolution), adaptive_steps))
}

impl FromStr for CaseName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_case_name(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_names() {
        assert_eq!(parse_case_name("S256-RD128adap2").unwrap(), CaseName::new(256, 128, 128, 2));
        assert_eq!(parse_case_name("SRD368").unwrap(), CaseName::new(368, 368, 368, 0));
        assert_eq!(parse_case_name("S320-R160-D320").unwrap(), CaseName::new(320, 160, 320, 0));
    }

    #[test]
    fn defaults_and_variants() {
        assert_eq!(parse_case_name("S64").unwrap(), CaseName::new(64, 64, 64, 0));
        assert_eq!(parse_case_name("S64-R32").unwrap(), CaseName::new(64, 32, 32, 0));
        assert_eq!(parse_case_name("S64-D128").unwrap(), CaseName::new(64, 64, 128, 0));
        assert_eq!(parse_case_name("S64RD32-adap1").unwrap(), CaseName::new(64, 32, 32, 1));
        assert_eq!(parse_case_name("S64-R32-D32adap3").unwrap(), CaseName::new(64, 32, 32, 3));
    }

    #[test]
    fn malformed_names_report_position() {
        let pos = |s: &str| match parse_case_name(s) {
            Err(Error::MalformedCaseName { position, .. }) => position,
            other => panic!("{s}: {other:?}"),
        };
        assert_eq!(pos("X64"), 0);
        assert_eq!(pos("S"), 1);
        assert_eq!(pos("S64-R"), 5);
        assert_eq!(pos("S64-R32-RD16"), 7);
        assert_eq!(pos("S64adap"), 7);
        assert_eq!(pos("SRD12x"), 5);
        assert_eq!(pos("S0"), 1);
    }

    #[test]
    fn plan_checks_divisibility() {
        assert_eq!(CaseName::new(64, 16, 32, 0).plan().unwrap(), (2, 2));
        assert!(CaseName::new(64, 24, 24, 0).plan().is_err());
        assert!(CaseName::new(64, 32, 48, 0).plan().is_err());
    }
}
