//! Posture sequences, datasets and the motion CSV format.
//!
//! A motion CSV has optional leading `# key=value` comment lines (`fps`,
//! `class`, `subject`), one header row of `JOINT.axis` names and one row of
//! decimal degrees per frame.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{GomError, Result};
use crate::topology::SkeletonTopology;

pub const DEFAULT_FRAME_RATE_HZ: f64 = 90.0;

/// Two lags plus one prediction target.
pub const MIN_FRAMES: usize = 3;

const JUMP_WARN_DEGREES: f64 = 180.0;

/// T×N matrix of Euler joint angles in degrees, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PostureSequence {
    channel_names: Vec<String>,
    data: Vec<f64>,
    frame_rate_hz: f64,
    pub class_label: String,
    pub subject_id: String,
}

impl PostureSequence {
    pub fn new(channel_names: Vec<String>, data: Vec<f64>, frame_rate_hz: f64) -> Result<Self> {
        let n = channel_names.len();
        if n == 0 {
            return Err(GomError::Shape("no channels".into()));
        }
        if !data.len().is_multiple_of(n) {
            return Err(GomError::Shape(format!(
                "{} values do not fill rows of {n} channels",
                data.len()
            )));
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(GomError::InvalidParameter(format!(
                "frame rate must be positive, got {frame_rate_hz}"
            )));
        }
        let len = data.len() / n;
        if len < MIN_FRAMES {
            return Err(GomError::TooShort { len, min: MIN_FRAMES });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(GomError::NonFinite {
                row: i / n + 1,
                channel: channel_names[i % n].clone(),
            });
        }
        Ok(PostureSequence {
            channel_names,
            data,
            frame_rate_hz,
            class_label: String::new(),
            subject_id: String::new(),
        })
    }

    pub fn from_frames(channel_names: Vec<String>, frames: &[Vec<f64>], frame_rate_hz: f64) -> Result<Self> {
        let n = channel_names.len();
        if let Some(bad) = frames.iter().position(|f| f.len() != n) {
            return Err(GomError::Shape(format!(
                "frame {bad} has {} values, expected {n}",
                frames[bad].len()
            )));
        }
        Self::new(channel_names, frames.concat(), frame_rate_hz)
    }

    pub fn with_labels(mut self, class_label: impl Into<String>, subject_id: impl Into<String>) -> Self {
        self.class_label = class_label.into();
        self.subject_id = subject_id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channel_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channel_count(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.channel_count();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.channel_count())
    }

    pub fn value(&self, t: usize, channel: usize) -> f64 {
        self.data[t * self.channel_count() + channel]
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.frames().map(|f| f[channel]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Keeps only the listed channels, in the listed order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<PostureSequence> {
        let n = self.channel_count();
        if channels.is_empty() {
            return Err(GomError::Empty("channel subset".into()));
        }
        if let Some(&c) = channels.iter().find(|&&c| c >= n) {
            return Err(GomError::Shape(format!("channel index {c} out of range {n}")));
        }
        let names = channels.iter().map(|&c| self.channel_names[c].clone()).collect();
        let data = self
            .frames()
            .flat_map(|f| channels.iter().map(move |&c| f[c]))
            .collect();
        let mut out = PostureSequence::new(names, data, self.frame_rate_hz)?;
        out.class_label = self.class_label.clone();
        out.subject_id = self.subject_id.clone();
        Ok(out)
    }

    pub fn same_channels(&self, other: &PostureSequence) -> bool {
        self.channel_names == other.channel_names
    }

    pub fn check_topology(&self, topology: &SkeletonTopology) -> Result<()> {
        if self.channel_names.as_slice() != topology.channel_names() {
            return Err(GomError::ChannelMismatch);
        }
        Ok(())
    }

    /// Frames where some channel jumps by more than 180 degrees.
    pub fn large_jumps(&self) -> Vec<(usize, usize)> {
        let n = self.channel_count();
        let mut out = Vec::new();
        for t in 1..self.len() {
            for c in 0..n {
                if (self.value(t, c) - self.value(t - 1, c)).abs() > JUMP_WARN_DEGREES {
                    out.push((t, c));
                }
            }
        }
        out
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# fps={}", self.frame_rate_hz);
        if !self.class_label.is_empty() {
            let _ = writeln!(s, "# class={}", self.class_label);
        }
        if !self.subject_id.is_empty() {
            let _ = writeln!(s, "# subject={}", self.subject_id);
        }
        s.push_str(&self.channel_names.join(","));
        s.push('\n');
        for frame in self.frames() {
            for (i, v) in frame.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                // shortest representation that parses back to the same f64
                let _ = write!(s, "{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| GomError::io(path, e))
    }
}

/// Parses a motion CSV, reordering columns into the topology's channel order.
pub fn parse_motion_csv(text: &str, topology: &SkeletonTopology) -> Result<PostureSequence> {
    let mut fps = DEFAULT_FRAME_RATE_HZ;
    let mut class_label = String::new();
    let mut subject_id = String::new();
    for line in text
        .lines()
        .map(str::trim)
        .take_while(|l| l.starts_with('#') || l.is_empty())
    {
        let Some((key, value)) = line.trim_start_matches('#').split_once('=') else {
            continue;
        };
        match key.trim() {
            "fps" => {
                fps = value
                    .trim()
                    .parse()
                    .map_err(|_| GomError::InvalidParameter(format!("bad fps comment {value:?}")))?
            }
            "class" => class_label = value.trim().to_string(),
            "subject" => subject_id = value.trim().to_string(),
            _ => {}
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();

    let n = topology.channel_count();
    let mut column_of = vec![None; n];
    for (col, name) in header.iter().enumerate() {
        let ch = topology.channel_by_name(name)?;
        if column_of[ch].replace(col).is_some() {
            return Err(GomError::Shape(format!("duplicate column {name:?}")));
        }
    }
    let columns: Vec<usize> = column_of
        .iter()
        .enumerate()
        .map(|(ch, col)| col.ok_or_else(|| GomError::MissingChannel(topology.channel_name(ch).to_string())))
        .collect::<Result<_>>()?;

    let mut data = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != header.len() {
            return Err(GomError::Shape(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        for (ch, &col) in columns.iter().enumerate() {
            let cell = &record[col];
            let v: f64 = cell.parse().map_err(|_| GomError::NonNumeric {
                row,
                channel: topology.channel_name(ch).to_string(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(GomError::NonFinite {
                    row,
                    channel: topology.channel_name(ch).to_string(),
                });
            }
            data.push(v);
        }
    }

    let seq = PostureSequence::new(topology.channel_names().to_vec(), data, fps)?.with_labels(class_label, subject_id);
    let jumps = seq.large_jumps();
    if let Some(&(t, c)) = jumps.first() {
        log::warn!(
            "{} frame-to-frame jumps above {JUMP_WARN_DEGREES} degrees, first at frame {t} channel {}",
            jumps.len(),
            seq.channel_names()[c]
        );
    }
    Ok(seq)
}

pub fn load_motion_csv(path: impl AsRef<Path>, topology: &SkeletonTopology) -> Result<PostureSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| GomError::io(path, e))?;
    parse_motion_csv(&text, topology)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovementDataset {
    pub sequences: Vec<PostureSequence>,
    pub topology: SkeletonTopology,
}

impl MovementDataset {
    pub fn new(topology: SkeletonTopology, sequences: Vec<PostureSequence>) -> Result<Self> {
        for s in &sequences {
            s.check_topology(&topology)?;
        }
        Ok(MovementDataset { sequences, topology })
    }

    /// Class labels in sorted order; this order defines class indices.
    pub fn classes(&self) -> Vec<String> {
        self.sequences
            .iter()
            .map(|s| s.class_label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn class_indices(&self, class_label: &str) -> Vec<usize> {
        (0..self.sequences.len())
            .filter(|&i| self.sequences[i].class_label == class_label)
            .collect()
    }

    pub fn of_class<'a>(&'a self, class_label: &'a str) -> impl Iterator<Item = &'a PostureSequence> + 'a {
        self.sequences.iter().filter(move |s| s.class_label == class_label)
    }

    /// Loads every `*.csv` in `dir` in file-name order. Sequences without a
    /// `# class=` comment take the file-name prefix before the first `_`.
    pub fn load_dir(dir: impl AsRef<Path>, topology: SkeletonTopology) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| GomError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        let mut sequences = Vec::with_capacity(paths.len());
        for p in paths {
            let mut seq = load_motion_csv(&p, &topology)?;
            if seq.class_label.is_empty() {
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                seq.class_label = stem.split('_').next().unwrap_or(stem).to_string();
            }
            sequences.push(seq);
        }
        if sequences.is_empty() {
            return Err(GomError::Empty(format!("no csv files in {}", dir.display())));
        }
        Self::new(topology, sequences)
    }
}
