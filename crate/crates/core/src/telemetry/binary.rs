//! Native log file: `RVCL` magic, u16 version, u32 header length, JSON
//! header, then tagged length-prefixed records. Integers are little-endian.

use thiserror::Error;

use super::{LogHeader, LoggedInput, Outcome, Sample, TrialLog};
use crate::workflow::{Step, WorkflowEvent};

pub const MAGIC: &[u8; 4] = b"RVCL";
pub const VERSION: u16 = 1;

const TAG_SAMPLE: u8 = 1;
const TAG_EVENT: u8 = 2;
const TAG_INPUT: u8 = 3;
const TAG_OUTCOME: u8 = 4;

const SAMPLE_F64S: usize = 16;
const SAMPLE_LEN: usize = SAMPLE_F64S * 8 + 1;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("not a trial log (bad magic)")]
    BadMagic,
    #[error("unsupported log version {0}")]
    Version(u16),
    #[error("truncated at byte {0}")]
    Truncated(usize),
    #[error("header: {0}")]
    Header(serde_json::Error),
    #[error("record {index} at byte {offset}: {reason}")]
    Record {
        index: usize,
        offset: usize,
        reason: String,
    },
}

pub fn encode(log: &TrialLog) -> Vec<u8> {
    let header = serde_json::to_vec(&log.header).expect("header serializes");
    let mut out = Vec::with_capacity(10 + header.len() + log.samples.len() * (SAMPLE_LEN + 5));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let mut payload = Vec::with_capacity(SAMPLE_LEN);
    for s in &log.samples {
        payload.clear();
        for v in sample_values(s) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        payload.push(s.step.code());
        put_record(&mut out, TAG_SAMPLE, &payload);
    }
    for e in &log.events {
        put_record(&mut out, TAG_EVENT, &serde_json::to_vec(e).expect("event serializes"));
    }
    for i in &log.inputs {
        put_record(&mut out, TAG_INPUT, &serde_json::to_vec(i).expect("input serializes"));
    }
    if let Some(o) = &log.outcome {
        put_record(
            &mut out,
            TAG_OUTCOME,
            &serde_json::to_vec(o).expect("outcome serializes"),
        );
    }
    out
}

fn put_record(out: &mut Vec<u8>, tag: u8, payload: &[u8]) {
    out.push(tag);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
}

fn sample_values(s: &Sample) -> [f64; SAMPLE_F64S] {
    let mut v = [0.0; SAMPLE_F64S];
    v[0] = s.t;
    v[1..6].copy_from_slice(&s.joints);
    v[6..9].copy_from_slice(&s.tip);
    v[9..12].copy_from_slice(&s.vel);
    v[12..15].copy_from_slice(&s.force);
    v[15] = s.rcm_deviation_um;
    v
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(DecodeError::Truncated(self.buf.len()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrialLog, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| DecodeError::BadMagic)? != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(DecodeError::Version(version));
    }
    let hlen = r.u32()? as usize;
    let header: LogHeader = serde_json::from_slice(r.take(hlen)?).map_err(DecodeError::Header)?;
    let mut log = TrialLog::new(header);
    let mut index = 0;
    while r.pos < bytes.len() {
        let offset = r.pos;
        let bad = |reason: String| DecodeError::Record { index, offset, reason };
        let tag = r.take(1)?[0];
        let len = r.u32()? as usize;
        let payload = r.take(len)?;
        match tag {
            TAG_SAMPLE => {
                if len != SAMPLE_LEN {
                    return Err(bad(format!("sample length {len}")));
                }
                let v: Vec<f64> = payload[..SAMPLE_F64S * 8]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                let step = Step::from_code(payload[SAMPLE_LEN - 1])
                    .ok_or_else(|| bad(format!("invalid step code {}", payload[SAMPLE_LEN - 1])))?;
                log.samples.push(Sample {
                    t: v[0],
                    joints: v[1..6].try_into().expect("5"),
                    tip: v[6..9].try_into().expect("3"),
                    vel: v[9..12].try_into().expect("3"),
                    force: v[12..15].try_into().expect("3"),
                    rcm_deviation_um: v[15],
                    step,
                });
            }
            TAG_EVENT => log
                .events
                .push(serde_json::from_slice::<WorkflowEvent>(payload).map_err(|e| bad(e.to_string()))?),
            TAG_INPUT => log
                .inputs
                .push(serde_json::from_slice::<LoggedInput>(payload).map_err(|e| bad(e.to_string()))?),
            TAG_OUTCOME => {
                log.outcome = Some(serde_json::from_slice::<Outcome>(payload).map_err(|e| bad(e.to_string()))?)
            }
            other => return Err(bad(format!("unknown tag {other}"))),
        }
        index += 1;
    }
    Ok(log)
}
