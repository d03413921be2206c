use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Brood-cell status letter code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatusCode {
    /// Dead visible larva.
    D,
    /// Unconsumed food only.
    F,
    /// Hatched (cocoon or exuvia traces).
    H,
    /// Visible alive larva.
    L,
    /// Visible alive prepupa.
    P,
}

impl StatusCode {
    pub const ALL: [StatusCode; 5] = [StatusCode::D, StatusCode::F, StatusCode::H, StatusCode::L, StatusCode::P];

    pub fn label(self) -> &'static str {
        match self {
            StatusCode::D => "Dead",
            StatusCode::F => "Food",
            StatusCode::H => "Hatched",
            StatusCode::L => "Larva",
            StatusCode::P => "Prepupa",
        }
    }

    pub fn letter(self) -> char {
        match self {
            StatusCode::D => 'D',
            StatusCode::F => 'F',
            StatusCode::H => 'H',
            StatusCode::L => 'L',
            StatusCode::P => 'P',
        }
    }
}

impl FromStr for StatusCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "D" => Ok(StatusCode::D),
            "F" => Ok(StatusCode::F),
            "H" => Ok(StatusCode::H),
            "L" => Ok(StatusCode::L),
            "P" => Ok(StatusCode::P),
            other => Err(Error::Config(format!("unknown status code {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassGroup {
    /// More instances than the label cap; unlabeled instances remain in training images.
    Majority,
    /// At most the label cap; fully labeled.
    Minority,
}

impl fmt::Display for ClassGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassGroup::Majority => "majority",
            ClassGroup::Minority => "minority",
        })
    }
}

impl FromStr for ClassGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(ClassGroup::Majority),
            "minority" => Ok(ClassGroup::Minority),
            other => Err(Error::Config(format!("unknown class group {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub id: usize,
    /// `"Taxon - Status"`.
    pub name: String,
    pub status_code: StatusCode,
    pub group: ClassGroup,
    /// Masking of unlabeled false positives applies to this class.
    pub whitelisted: bool,
}

/// Ordered set of classes with contiguous ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCatalog {
    classes: Vec<ClassSpec>,
}

impl ClassCatalog {
    pub fn new(classes: Vec<ClassSpec>) -> Result<Self> {
        for (i, c) in classes.iter().enumerate() {
            if c.id != i {
                return Err(Error::Config(format!("class ids must be contiguous: position {i} has id {}", c.id)));
            }
            if c.whitelisted && c.group != ClassGroup::Majority {
                return Err(Error::Config(format!("class {i} is whitelisted but not in the majority group")));
            }
        }
        Ok(Self { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassSpec] {
        &self.classes
    }

    pub fn get(&self, id: usize) -> Option<&ClassSpec> {
        self.classes.get(id)
    }

    pub fn whitelist(&self) -> Vec<usize> {
        self.classes.iter().filter(|c| c.whitelisted).map(|c| c.id).collect()
    }

    pub fn group_members(&self, group: ClassGroup) -> Vec<usize> {
        self.classes.iter().filter(|c| c.group == group).map(|c| c.id).collect()
    }

    pub(crate) fn set_capped(&mut self, id: usize, capped: bool) {
        let c = &mut self.classes[id];
        if capped {
            c.group = ClassGroup::Majority;
            c.whitelisted = true;
        } else {
            c.group = ClassGroup::Minority;
            c.whitelisted = false;
        }
    }

    /// Tab-separated manifest, one class per line.
    pub fn to_manifest(&self) -> String {
        let mut out = String::from("# id\tname\tstatus\tgroup\twhitelisted\n");
        for c in &self.classes {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", c.id, c.name, c.status_code.letter(), c.group, c.whitelisted));
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut classes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |what: &str| Error::Config(format!("catalog line {}: {what}", lineno + 1));
            if fields.len() != 5 {
                return Err(bad("expected 5 tab-separated fields"));
            }
            classes.push(ClassSpec {
                id: fields[0].parse().map_err(|_| bad("bad id"))?,
                name: fields[1].to_string(),
                status_code: fields[2].parse()?,
                group: fields[3].parse()?,
                whitelisted: fields[4].parse().map_err(|_| bad("bad whitelisted flag"))?,
            });
        }
        Self::new(classes)
    }
}
