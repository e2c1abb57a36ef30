//! On-disk cohort layout.
//!
//! A cohort directory holds `cohort.json` (descriptor, generation parameters,
//! subject order) and one `<subject_id>.xfb` epoch file per subject. Epoch
//! files are little-endian:
//!
//! ```text
//! magic "XFB1" | version u16 | mode u8 | sampling_rate u32 | epoch_seconds u16 | n_epochs u32
//! n_epochs x ( payload f32 x (5 | rate*seconds) | label u8 )
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Cohort, DatasetDescriptor, EpochData, GenMode, GenParams, SubjectRecording, SynthError,
    FEATURE_DIM,
};
use crate::stages::StageLabel;

pub const MAGIC: &[u8; 4] = b"XFB1";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 2 + 4;

#[derive(Serialize, Deserialize)]
struct CohortIndex {
    descriptor: DatasetDescriptor,
    gen_params: GenParams,
    subjects: Vec<String>,
}

fn format_err(msg: impl Into<String>) -> SynthError {
    SynthError::Format(msg.into())
}

pub fn encode_subject(descriptor: &DatasetDescriptor, subject: &SubjectRecording) -> Vec<u8> {
    let (mode, width) = match &subject.epochs {
        EpochData::Features(_) => (0u8, FEATURE_DIM),
        EpochData::Signal(_) => (1u8, descriptor.samples_per_epoch()),
    };
    let n = subject.labels.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * (4 * width + 1));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(mode);
    out.extend_from_slice(&descriptor.sampling_rate_hz.to_le_bytes());
    out.extend_from_slice(&(descriptor.epoch_seconds as u16).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for (i, label) in subject.labels.iter().enumerate() {
        let payload: &[f32] = match &subject.epochs {
            EpochData::Features(v) => &v[i],
            EpochData::Signal(v) => &v[i],
        };
        for x in payload {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.push(label.ordinal() as u8);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SynthError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| {
            format_err(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, SynthError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, SynthError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, SynthError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, SynthError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decode one epoch file, checking it against the owning descriptor.
pub fn decode_subject(
    descriptor: &DatasetDescriptor,
    subject_id: &str,
    bytes: &[u8],
) -> Result<SubjectRecording, SynthError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let mode = match r.u8()? {
        0 => GenMode::Features,
        1 => GenMode::Signal,
        m => return Err(format_err(format!("unknown mode byte {m}"))),
    };
    let rate = r.u32()?;
    let seconds = r.u16()?;
    if rate != descriptor.sampling_rate_hz || seconds as u32 != descriptor.epoch_seconds {
        return Err(format_err(format!(
            "header says {rate} Hz x {seconds} s, descriptor says {} Hz x {} s",
            descriptor.sampling_rate_hz, descriptor.epoch_seconds
        )));
    }
    let n = r.u32()? as usize;
    let width = match mode {
        GenMode::Features => FEATURE_DIM,
        GenMode::Signal => rate as usize * seconds as usize,
    };
    let expected = HEADER_LEN + n * (4 * width + 1);
    if bytes.len() != expected {
        return Err(format_err(format!(
            "file is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }

    let mut labels = Vec::with_capacity(n);
    let epochs = match mode {
        GenMode::Features => {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let mut f = [0f32; FEATURE_DIM];
                for x in &mut f {
                    *x = r.f32()?;
                }
                v.push(f);
                labels.push(label(r.u8()?)?);
            }
            EpochData::Features(v)
        }
        GenMode::Signal => {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let e = (0..width).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
                v.push(e);
                labels.push(label(r.u8()?)?);
            }
            EpochData::Signal(v)
        }
    };
    Ok(SubjectRecording {
        subject_id: subject_id.to_string(),
        epochs,
        labels,
    })
}

fn label(b: u8) -> Result<StageLabel, SynthError> {
    StageLabel::from_ordinal(b).map_err(|_| format_err(format!("label byte {b} out of range")))
}

pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<(), SynthError> {
    cohort.validate()?;
    fs::create_dir_all(dir)?;
    let index = CohortIndex {
        descriptor: cohort.descriptor.clone(),
        gen_params: cohort.gen_params.clone(),
        subjects: cohort.subjects.iter().map(|s| s.subject_id.clone()).collect(),
    };
    let json = serde_json::to_string_pretty(&index).map_err(|e| format_err(e.to_string()))?;
    fs::write(dir.join("cohort.json"), json)?;
    for s in &cohort.subjects {
        fs::write(dir.join(format!("{}.xfb", s.subject_id)), encode_subject(&cohort.descriptor, s))?;
    }
    Ok(())
}

pub fn read_cohort(dir: &Path) -> Result<Cohort, SynthError> {
    let index: CohortIndex = serde_json::from_slice(&fs::read(dir.join("cohort.json"))?)
        .map_err(|e| format_err(format!("cohort.json: {e}")))?;
    let subjects = index
        .subjects
        .iter()
        .map(|id| {
            let bytes = fs::read(dir.join(format!("{id}.xfb")))?;
            decode_subject(&index.descriptor, id, &bytes)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cohort = Cohort {
        descriptor: index.descriptor,
        subjects,
        gen_params: index.gen_params,
    };
    cohort.validate()?;
    Ok(cohort)
}
