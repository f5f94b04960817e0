//! PSG records, annotation and prediction tracks, and their on-disk layout.
//!
//! A record lives in its own directory:
//!
//! ```text
//! header.txt      key=value lines: id, fs, n, channels
//! ch01.f32 ..     one little-endian f32 blob per channel, in channel order
//! ch13.f32
//! arousal.i8      optional per-sample labels (-1, 0, 1)
//! pred.f32        optional per-sample target probabilities
//! ```

mod synth;

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use synth::{generate_synthetic, ArousalKind, ArousalWindow};

/// Sampling rate shared by every channel.
pub const FS: f64 = 200.0;
/// Number of channels in a record.
pub const NUM_CHANNELS: usize = 13;

pub const HEADER_FILE: &str = "header.txt";
pub const ANNOTATION_FILE: &str = "arousal.i8";
pub const PREDICTION_FILE: &str = "pred.f32";

/// The thirteen PSG channels, in their fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelId {
    F3M2,
    F4M1,
    C3M2,
    C4M1,
    O1M2,
    O2M1,
    Eog,
    ChinEmg,
    Abdominal,
    Chest,
    Airflow,
    Sao2,
    Ecg,
}

impl ChannelId {
    pub const ALL: [ChannelId; NUM_CHANNELS] = [
        ChannelId::F3M2,
        ChannelId::F4M1,
        ChannelId::C3M2,
        ChannelId::C4M1,
        ChannelId::O1M2,
        ChannelId::O2M1,
        ChannelId::Eog,
        ChannelId::ChinEmg,
        ChannelId::Abdominal,
        ChannelId::Chest,
        ChannelId::Airflow,
        ChannelId::Sao2,
        ChannelId::Ecg,
    ];

    /// 1-based channel number.
    pub fn number(self) -> usize {
        self.position() + 1
    }

    /// 0-based position in [`ChannelId::ALL`].
    pub fn position(self) -> usize {
        self as usize
    }

    pub fn from_number(number: usize) -> Option<ChannelId> {
        number
            .checked_sub(1)
            .and_then(|p| Self::ALL.get(p).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelId::F3M2 => "F3-M2",
            ChannelId::F4M1 => "F4-M1",
            ChannelId::C3M2 => "C3-M2",
            ChannelId::C4M1 => "C4-M1",
            ChannelId::O1M2 => "O1-M2",
            ChannelId::O2M1 => "O2-M1",
            ChannelId::Eog => "EOG-L",
            ChannelId::ChinEmg => "ChinEMG",
            ChannelId::Abdominal => "Abdominal",
            ChannelId::Chest => "Chest",
            ChannelId::Airflow => "Airflow",
            ChannelId::Sao2 => "SaO2",
            ChannelId::Ecg => "ECG",
        }
    }

    pub fn from_name(name: &str) -> Option<ChannelId> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A validated 13-channel recording at 200 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct PsgRecord {
    id: String,
    channels: Vec<Vec<f64>>,
}

impl PsgRecord {
    /// Builds a record from channel vectors given in [`ChannelId::ALL`] order.
    pub fn new(id: impl Into<String>, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.len() != NUM_CHANNELS {
            return Err(Error::ChannelCount(channels.len()));
        }
        let n = channels[0].len();
        for (ch, samples) in ChannelId::ALL.iter().zip(&channels) {
            if samples.len() != n {
                return Err(Error::LengthMismatch {
                    what: ch.name().to_string(),
                    expected: n,
                    got: samples.len(),
                });
            }
            if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    channel: ch.name().to_string(),
                    index,
                });
            }
        }
        Ok(PsgRecord {
            id: id.into(),
            channels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn fs(&self) -> f64 {
        FS
    }

    /// Sample count per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, id: ChannelId) -> &[f64] {
        &self.channels[id.position()]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    /// Replaces every channel through `f`, keeping the id.
    pub fn map_channels<F>(&self, mut f: F) -> Result<PsgRecord>
    where
        F: FnMut(ChannelId, &[f64]) -> Result<Vec<f64>>,
    {
        let channels = ChannelId::ALL
            .iter()
            .map(|&c| f(c, self.channel(c)))
            .collect::<Result<Vec<_>>>()?;
        PsgRecord::new(self.id.clone(), channels)
    }
}

/// Per-sample labels: 1 target arousal, 0 non-arousal, -1 non-target arousal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationTrack {
    labels: Vec<i8>,
}

impl AnnotationTrack {
    pub fn new(labels: Vec<i8>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyTrack);
        }
        if let Some(index) = labels.iter().position(|l| !(-1..=1).contains(l)) {
            return Err(Error::InvalidLabel {
                index,
                value: labels[index] as i64,
            });
        }
        Ok(AnnotationTrack { labels })
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-sample probability of target arousal.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrack {
    probs: Vec<f32>,
}

impl PredictionTrack {
    pub fn new(probs: Vec<f32>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyTrack);
        }
        if let Some(index) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidProbability {
                index,
                value: probs[index] as f64,
            });
        }
        Ok(PredictionTrack { probs })
    }

    /// Narrows f64 probabilities to the stored f32 precision.
    pub fn from_f64(probs: &[f64]) -> Result<Self> {
        if let Some(index) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidProbability {
                index,
                value: probs[index],
            });
        }
        Self::new(probs.iter().map(|&p| p as f32).collect())
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

fn channel_file(c: ChannelId) -> String {
    format!("ch{:02}.f32", c.number())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn f32_from_le(bytes: &[u8], what: &str) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Header(format!(
            "{what}: payload of {} bytes is not a whole number of f32 samples",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub(crate) fn f32_to_le(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

struct Header {
    id: String,
    fs: f64,
    n: usize,
    channels: Vec<String>,
}

fn parse_header(text: &str) -> Result<Header> {
    let mut id = None;
    let mut fs = None;
    let mut n = None;
    let mut channels = None;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Header(format!("line without '=': {line}")))?;
        let value = value.trim();
        match key.trim() {
            "id" => id = Some(value.to_string()),
            "fs" => {
                fs = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| Error::Header(format!("bad fs: {value}")))?,
                )
            }
            "n" => {
                n = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| Error::Header(format!("bad n: {value}")))?,
                )
            }
            "channels" => {
                channels = Some(
                    value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect::<Vec<_>>(),
                )
            }
            _ => {}
        }
    }
    Ok(Header {
        id: id.ok_or_else(|| Error::Header("missing id".into()))?,
        fs: fs.ok_or_else(|| Error::Header("missing fs".into()))?,
        n: n.ok_or_else(|| Error::Header("missing n".into()))?,
        channels: channels.ok_or_else(|| Error::Header("missing channels".into()))?,
    })
}

/// Loads and validates a record directory.
pub fn load_record(dir: impl AsRef<Path>) -> Result<PsgRecord> {
    let dir = dir.as_ref();
    let header_path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header = parse_header(&text)?;
    if header.channels.len() != NUM_CHANNELS {
        return Err(Error::ChannelCount(header.channels.len()));
    }
    for (expected, got) in ChannelId::ALL.iter().zip(&header.channels) {
        if expected.name() != got {
            return Err(Error::Header(format!(
                "channel order: expected {expected}, got {got}"
            )));
        }
    }
    if header.fs != FS {
        return Err(Error::SamplingRate(header.fs));
    }

    let mut channels = Vec::with_capacity(NUM_CHANNELS);
    for c in ChannelId::ALL {
        let path = dir.join(channel_file(c));
        if !path.exists() {
            return Err(Error::MissingChannel(c.name().to_string()));
        }
        let samples = f32_from_le(&read_bytes(&path)?, c.name())?;
        if samples.len() != header.n {
            return Err(Error::LengthMismatch {
                what: c.name().to_string(),
                expected: header.n,
                got: samples.len(),
            });
        }
        channels.push(samples.into_iter().map(f64::from).collect());
    }
    PsgRecord::new(header.id, channels)
}

/// Writes a record directory. Samples are narrowed to f32.
pub fn store_record(record: &PsgRecord, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<&str> = ChannelId::ALL.iter().map(|c| c.name()).collect();
    let header = format!(
        "id={}\nfs={}\nn={}\nchannels={}\n",
        record.id(),
        FS as u32,
        record.len(),
        names.join(",")
    );
    write_bytes(&dir.join(HEADER_FILE), header.as_bytes())?;
    for c in ChannelId::ALL {
        let bytes = f32_to_le(record.channel(c).iter().map(|&x| x as f32));
        write_bytes(&dir.join(channel_file(c)), &bytes)?;
    }
    Ok(())
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationTrack> {
    let bytes = read_bytes(path.as_ref())?;
    AnnotationTrack::new(bytes.into_iter().map(|b| b as i8).collect())
}

pub fn store_annotations(track: &AnnotationTrack, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = track.labels().iter().map(|&l| l as u8).collect();
    write_bytes(path.as_ref(), &bytes)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<PredictionTrack> {
    let path = path.as_ref();
    let probs = f32_from_le(&read_bytes(path)?, "predictions")?;
    PredictionTrack::new(probs)
}

pub fn store_predictions(track: &PredictionTrack, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &f32_to_le(track.probs().iter().copied()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_record(n: usize) -> PsgRecord {
        let channels = (0..NUM_CHANNELS)
            .map(|c| (0..n).map(|i| (c * 1000 + i) as f32 as f64 * 0.25).collect())
            .collect();
        PsgRecord::new("tiny", channels).unwrap()
    }

    #[test]
    fn channel_numbers_are_total_and_fixed() {
        for (i, c) in ChannelId::ALL.iter().enumerate() {
            assert_eq!(c.number(), i + 1);
            assert_eq!(ChannelId::from_number(i + 1), Some(*c));
            assert_eq!(ChannelId::from_name(c.name()), Some(*c));
        }
        assert_eq!(ChannelId::from_number(0), None);
        assert_eq!(ChannelId::from_number(14), None);
        assert_eq!(ChannelId::Sao2.number(), 12);
    }

    #[test]
    fn two_channel_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(HEADER_FILE),
            "id=x\nfs=200\nn=4\nchannels=F3-M2,F4-M1\n",
        )
        .unwrap();
        let err = load_record(dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "expected 13 channels, got 2");
    }

    #[test]
    fn short_payload_is_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        store_record(&tiny_record(1000), dir.path()).unwrap();
        let path = dir.path().join("ch05.f32");
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(999 * 4);
        fs::write(&path, bytes).unwrap();
        match load_record(dir.path()) {
            Err(Error::LengthMismatch { expected, got, .. }) => {
                assert_eq!((expected, got), (1000, 999))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_rate_and_missing_channel() {
        let dir = tempfile::tempdir().unwrap();
        store_record(&tiny_record(10), dir.path()).unwrap();
        fs::remove_file(dir.path().join("ch13.f32")).unwrap();
        assert!(matches!(
            load_record(dir.path()),
            Err(Error::MissingChannel(_))
        ));

        let text = fs::read_to_string(dir.path().join(HEADER_FILE)).unwrap();
        fs::write(
            dir.path().join(HEADER_FILE),
            text.replace("fs=200", "fs=250"),
        )
        .unwrap();
        assert!(matches!(
            load_record(dir.path()),
            Err(Error::SamplingRate(f)) if f == 250.0
        ));
    }

    #[test]
    fn non_finite_sample_rejected() {
        let dir = tempfile::tempdir().unwrap();
        store_record(&tiny_record(10), dir.path()).unwrap();
        let path = dir.path().join("ch02.f32");
        let mut bytes = fs::read(&path).unwrap();
        bytes[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_record(dir.path()),
            Err(Error::NonFinite { index: 3, .. })
        ));
    }

    #[test]
    fn record_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let rec = tiny_record(1234);
        store_record(&rec, dir.path()).unwrap();
        assert_eq!(load_record(dir.path()).unwrap(), rec);
    }

    #[test]
    fn annotation_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(ANNOTATION_FILE);
        let track = AnnotationTrack::new(vec![1, 0, -1]).unwrap();
        store_annotations(&track, &path).unwrap();
        assert_eq!(load_annotations(&path).unwrap().labels(), &[1, 0, -1]);

        assert_eq!(
            AnnotationTrack::new(vec![]).unwrap_err().to_string(),
            "empty track"
        );
        assert!(matches!(
            AnnotationTrack::new(vec![0, 2]),
            Err(Error::InvalidLabel { index: 1, value: 2 })
        ));
    }

    #[test]
    fn prediction_range_enforced() {
        assert!(matches!(
            PredictionTrack::from_f64(&[0.5, 1.2]),
            Err(Error::InvalidProbability { index: 1, .. })
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(PREDICTION_FILE);
        let track = PredictionTrack::from_f64(&[0.0, 0.25, 1.0, 0.1]).unwrap();
        store_predictions(&track, &path).unwrap();
        assert_eq!(load_predictions(&path).unwrap(), track);
    }
}
