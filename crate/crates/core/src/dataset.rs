//! Unit-by-feature datasets and their comma-separated text format.
//!
//! ```text
//! # layout channels=32 samples=38
//! unit_id,session,label,f0,...,f{D-1}
//! 0,0,17,0.25,...
//! ```
//!
//! The leading `# layout` line is optional; it carries the channel-by-sample
//! shape needed by derivative preprocessing and waveform display. A label of
//! `-1` means no ground truth; either every row has a label or none does.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-by-sample shape of a flattened waveform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub channels: usize,
    pub samples: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.channels * self.samples
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub id: usize,
    pub session: usize,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveformDataset {
    /// Sorted by id; ids are `0..len`.
    pub units: Vec<Unit>,
    /// Ground-truth cluster per unit id, if known.
    pub labels: Option<Vec<usize>>,
    pub dim: usize,
    pub layout: Option<Layout>,
}

impl WaveformDataset {
    pub fn new(
        mut units: Vec<Unit>,
        labels: Option<Vec<usize>>,
        layout: Option<Layout>,
    ) -> Result<Self> {
        units.sort_by_key(|u| u.id);
        let mut seen = HashSet::new();
        for u in &units {
            if !seen.insert(u.id) {
                return Err(Error::DuplicateUnit(u.id));
            }
        }
        for (i, u) in units.iter().enumerate() {
            if u.id != i {
                return Err(Error::InvalidInput(format!(
                    "unit ids must be contiguous from 0; missing id {i}"
                )));
            }
        }
        let dim = units.first().map_or(0, |u| u.features.len());
        for u in &units {
            if u.features.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: u.features.len() });
            }
            if u.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("unit {} has a non-finite feature", u.id)));
            }
        }
        if let Some(l) = &labels {
            if l.len() != units.len() {
                return Err(Error::InvalidInput(format!(
                    "{} labels for {} units",
                    l.len(),
                    units.len()
                )));
            }
        }
        if let Some(layout) = layout {
            if !units.is_empty() && layout.dim() != dim {
                return Err(Error::DimensionMismatch { expected: layout.dim(), found: dim });
            }
        }
        Ok(WaveformDataset { units, labels, dim, layout })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn sessions(&self) -> Vec<usize> {
        self.units.iter().map(|u| u.session).collect()
    }

    pub fn n_sessions(&self) -> usize {
        self.units.iter().map(|u| u.session + 1).max().unwrap_or(0)
    }

    /// Serializes to the text format. Floats use shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(l) = self.layout {
            let _ = writeln!(out, "# layout channels={} samples={}", l.channels, l.samples);
        }
        out.push_str("unit_id,session,label");
        for i in 0..self.dim {
            let _ = write!(out, ",f{i}");
        }
        out.push('\n');
        for u in &self.units {
            let label = self.labels.as_ref().map_or(-1, |l| l[u.id] as i64);
            let _ = write!(out, "{},{},{}", u.id, u.session, label);
            for x in &u.features {
                let _ = write!(out, ",{x:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let perr = |line: usize, reason: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            reason,
        };
        let mut layout = None;
        let mut header_dim = None;
        let mut units = Vec::new();
        let mut labels: Vec<Option<usize>> = Vec::new();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if header_dim.is_none() {
                    layout = parse_layout(rest).map_err(|r| perr(lineno, r))?.or(layout);
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if header_dim.is_none() {
                if fields.len() < 3 || fields[..3] != ["unit_id", "session", "label"] {
                    return Err(perr(lineno, "expected header `unit_id,session,label,f0,...`".into()));
                }
                header_dim = Some(fields.len() - 3);
                continue;
            }
            let dim = header_dim.unwrap_or(0);
            if fields.len() != dim + 3 {
                return Err(perr(
                    lineno,
                    format!("expected {} feature columns, found {}", dim, fields.len().saturating_sub(3)),
                ));
            }
            let id: usize = fields[0].trim().parse().map_err(|_| perr(lineno, format!("bad unit_id `{}`", fields[0])))?;
            let session: usize =
                fields[1].trim().parse().map_err(|_| perr(lineno, format!("bad session `{}`", fields[1])))?;
            let label: i64 = fields[2].trim().parse().map_err(|_| perr(lineno, format!("bad label `{}`", fields[2])))?;
            let label = match label {
                -1 => None,
                l if l >= 0 => Some(l as usize),
                l => return Err(perr(lineno, format!("bad label `{l}`"))),
            };
            let features = fields[3..]
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|_| perr(lineno, format!("bad feature `{f}`"))))
                .collect::<Result<Vec<_>>>()?;
            if !seen.insert(id) {
                return Err(perr(lineno, format!("duplicate unit_id {id}")));
            }
            units.push(Unit { id, session, features });
            labels.push(label);
        }
        if header_dim.is_none() {
            return Err(perr(1, "missing header".into()));
        }
        let labeled = labels.iter().filter(|l| l.is_some()).count();
        let labels = if labeled == 0 {
            None
        } else if labeled == labels.len() {
            let mut by_id = vec![0; units.len()];
            for (u, l) in units.iter().zip(&labels) {
                if u.id < by_id.len() {
                    by_id[u.id] = l.unwrap_or(0);
                }
            }
            Some(by_id)
        } else {
            return Err(Error::InvalidInput(format!(
                "{}: either every unit has a label or none does",
                origin.display()
            )));
        };
        WaveformDataset::new(units, labels, layout)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn parse_layout(comment: &str) -> std::result::Result<Option<Layout>, String> {
    let mut words = comment.split_whitespace();
    if words.next() != Some("layout") {
        return Ok(None);
    }
    let (mut channels, mut samples) = (None, None);
    for w in words {
        let (k, v) = w.split_once('=').ok_or_else(|| format!("bad layout entry `{w}`"))?;
        let v: usize = v.parse().map_err(|_| format!("bad layout value `{w}`"))?;
        match k {
            "channels" => channels = Some(v),
            "samples" => samples = Some(v),
            _ => return Err(format!("unknown layout key `{k}`")),
        }
    }
    match (channels, samples) {
        (Some(channels), Some(samples)) => Ok(Some(Layout { channels, samples })),
        _ => Err("layout needs channels= and samples=".into()),
    }
}
