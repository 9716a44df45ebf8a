//! Standard MIDI File parsing and the dual onset/frame piano-roll encoding.
//!
//! The network input is two stacked 88-key rolls: the onset roll carries the
//! note velocity only at the step where a note starts, the frame roll carries it
//! at every step where the note sounds. Velocities are scaled by `1/127`.

use thiserror::Error;

use crate::matrix::Matrix;

/// Number of piano keys in a roll (MIDI 21..=108).
pub const N_KEYS: usize = 88;
/// Lowest MIDI pitch represented in a roll (A0).
pub const LOWEST_PITCH: u8 = 21;
/// Rows of the concatenated onset/frame input.
pub const INPUT_ROWS: usize = 2 * N_KEYS;

const DEFAULT_TEMPO_US: u32 = 500_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteEvent {
    pub pitch: u8,
    pub velocity: u8,
    pub onset: f64,
    pub offset: f64,
}

impl NoteEvent {
    pub fn new(pitch: u8, velocity: u8, onset: f64, offset: f64) -> Self {
        Self {
            pitch,
            velocity,
            onset,
            offset,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.pitch <= 127
            && (1..=127).contains(&self.velocity)
            && self.onset >= 0.0
            && self.offset > self.onset
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("MIDI parse error at byte {offset}: {kind}")]
pub struct MidiError {
    pub offset: usize,
    pub kind: MidiErrorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MidiErrorKind {
    #[error("missing MThd header")]
    MissingHeader,
    #[error("header chunk length {0} is too short")]
    BadHeaderLength(u32),
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
    #[error("zero ticks-per-quarter division")]
    ZeroDivision,
    #[error("chunk runs past end of file")]
    TruncatedChunk,
    #[error("unexpected end of track data")]
    UnexpectedEnd,
    #[error("variable-length quantity longer than 4 bytes")]
    VarLenOverflow,
    #[error("data byte without running status")]
    MissingRunningStatus,
    #[error("unsupported status byte {0:#04x}")]
    BadStatus(u8),
    #[error("tempo event with length {0}")]
    BadTempo(u32),
    #[error("expected {expected} tracks, found {found}")]
    TrackCount { expected: u16, found: u16 },
}

/// Notes recovered from a file plus warnings about repairs made on the way.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedMidi {
    pub notes: Vec<NoteEvent>,
    /// Note-ons with no matching note-off, closed at the end of their track.
    pub closed_at_track_end: usize,
    /// Zero-duration notes that were discarded.
    pub dropped_empty: usize,
}

impl ParsedMidi {
    pub fn has_warnings(&self) -> bool {
        self.closed_at_track_end > 0 || self.dropped_empty > 0
    }
}

#[derive(Debug, Clone, Copy)]
enum Timing {
    Metrical(u16),
    Smpte { seconds_per_tick: f64 },
}

#[derive(Debug, Clone, Copy)]
enum RawKind {
    On { channel: u8, pitch: u8, velocity: u8 },
    Off { channel: u8, pitch: u8 },
}

struct RawTrack {
    events: Vec<(u64, RawKind)>,
    end_tick: u64,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, kind: MidiErrorKind) -> MidiError {
        MidiError {
            offset: self.pos,
            kind,
        }
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        if self.pos >= self.end {
            return Err(self.err(MidiErrorKind::UnexpectedEnd));
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn peek(&self) -> Result<u8, MidiError> {
        if self.pos >= self.end {
            return Err(self.err(MidiErrorKind::UnexpectedEnd));
        }
        Ok(self.bytes[self.pos])
    }

    fn var_len(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError {
            offset: start,
            kind: MidiErrorKind::VarLenOverflow,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.pos + n > self.end {
            return Err(self.err(MidiErrorKind::UnexpectedEnd));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

/// Parses an SMF type-0 or type-1 file into paired note events in seconds.
///
/// Note-on with velocity 0 is a note-off. A note-off closes the earliest
/// still-open note-on for the same channel and pitch. Sustain pedal and
/// program changes are ignored.
pub fn parse_midi(bytes: &[u8]) -> Result<ParsedMidi, MidiError> {
    if bytes.len() < 8 || &bytes[0..4] != b"MThd" {
        return Err(MidiError {
            offset: 0,
            kind: MidiErrorKind::MissingHeader,
        });
    }
    let header_len = be_u32(&bytes[4..8]);
    if header_len < 6 {
        return Err(MidiError {
            offset: 4,
            kind: MidiErrorKind::BadHeaderLength(header_len),
        });
    }
    if bytes.len() < 8 + header_len as usize {
        return Err(MidiError {
            offset: 8,
            kind: MidiErrorKind::TruncatedChunk,
        });
    }
    let format = be_u16(&bytes[8..10]);
    let n_tracks = be_u16(&bytes[10..12]);
    let division = be_u16(&bytes[12..14]);
    if format > 1 {
        return Err(MidiError {
            offset: 8,
            kind: MidiErrorKind::UnsupportedFormat(format),
        });
    }
    let timing = if division & 0x8000 != 0 {
        let fps = -((division >> 8) as u8 as i8) as f64;
        let ticks_per_frame = (division & 0xff) as f64;
        if fps <= 0.0 || ticks_per_frame == 0.0 {
            return Err(MidiError {
                offset: 12,
                kind: MidiErrorKind::ZeroDivision,
            });
        }
        Timing::Smpte {
            seconds_per_tick: 1.0 / (fps * ticks_per_frame),
        }
    } else {
        if division == 0 {
            return Err(MidiError {
                offset: 12,
                kind: MidiErrorKind::ZeroDivision,
            });
        }
        Timing::Metrical(division)
    };

    let mut pos = 8 + header_len as usize;
    let mut tracks = Vec::new();
    let mut tempo_events: Vec<(u64, u32)> = Vec::new();
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = be_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body = pos + 8;
        if body + len > bytes.len() {
            return Err(MidiError {
                offset: pos + 4,
                kind: MidiErrorKind::TruncatedChunk,
            });
        }
        if id == b"MTrk" {
            let mut cur = Cursor {
                bytes,
                pos: body,
                end: body + len,
            };
            tracks.push(parse_track(&mut cur, &mut tempo_events)?);
        }
        pos = body + len;
    }
    if pos != bytes.len() {
        return Err(MidiError {
            offset: pos,
            kind: MidiErrorKind::TruncatedChunk,
        });
    }
    if tracks.len() != n_tracks as usize {
        return Err(MidiError {
            offset: pos,
            kind: MidiErrorKind::TrackCount {
                expected: n_tracks,
                found: tracks.len() as u16,
            },
        });
    }

    tempo_events.sort_by_key(|&(tick, _)| tick);
    let clock = TempoMap::new(timing, &tempo_events);

    let mut out = ParsedMidi::default();
    for track in &tracks {
        pair_notes(track, &clock, &mut out);
    }
    out.notes.sort_by(|a, b| {
        a.onset
            .total_cmp(&b.onset)
            .then(a.pitch.cmp(&b.pitch))
            .then(a.offset.total_cmp(&b.offset))
    });
    Ok(out)
}

fn parse_track(cur: &mut Cursor<'_>, tempos: &mut Vec<(u64, u32)>) -> Result<RawTrack, MidiError> {
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut events = Vec::new();
    while cur.pos < cur.end {
        tick += u64::from(cur.var_len()?);
        let status_pos = cur.pos;
        let first = cur.peek()?;
        let status = if first & 0x80 != 0 {
            cur.pos += 1;
            first
        } else {
            running.ok_or(MidiError {
                offset: status_pos,
                kind: MidiErrorKind::MissingRunningStatus,
            })?
        };
        match status {
            0xff => {
                let meta_type = cur.u8()?;
                let len = cur.var_len()?;
                let data = cur.take(len as usize)?;
                match meta_type {
                    0x51 => {
                        if len != 3 {
                            return Err(MidiError {
                                offset: status_pos,
                                kind: MidiErrorKind::BadTempo(len),
                            });
                        }
                        let us = (u32::from(data[0]) << 16) | (u32::from(data[1]) << 8) | u32::from(data[2]);
                        tempos.push((tick, us));
                    }
                    0x2f => {
                        return Ok(RawTrack {
                            events,
                            end_tick: tick,
                        });
                    }
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                let len = cur.var_len()?;
                cur.take(len as usize)?;
            }
            0x80..=0xef => {
                running = Some(status);
                let channel = status & 0x0f;
                match status & 0xf0 {
                    0x80 => {
                        let pitch = cur.u8()? & 0x7f;
                        cur.u8()?;
                        events.push((tick, RawKind::Off { channel, pitch }));
                    }
                    0x90 => {
                        let pitch = cur.u8()? & 0x7f;
                        let velocity = cur.u8()? & 0x7f;
                        let kind = if velocity == 0 {
                            RawKind::Off { channel, pitch }
                        } else {
                            RawKind::On {
                                channel,
                                pitch,
                                velocity,
                            }
                        };
                        events.push((tick, kind));
                    }
                    0xc0 | 0xd0 => {
                        cur.u8()?;
                    }
                    _ => {
                        cur.take(2)?;
                    }
                }
            }
            other => {
                return Err(MidiError {
                    offset: status_pos,
                    kind: MidiErrorKind::BadStatus(other),
                })
            }
        }
    }
    // Missing end-of-track meta: close at the last event.
    Ok(RawTrack {
        events,
        end_tick: tick,
    })
}

/// Piecewise-constant tempo integration from ticks to seconds.
struct TempoMap {
    timing: Timing,
    /// (tick, seconds at tick, seconds per tick from here on)
    segments: Vec<(u64, f64, f64)>,
}

impl TempoMap {
    fn new(timing: Timing, tempos: &[(u64, u32)]) -> Self {
        let mut segments = Vec::new();
        if let Timing::Metrical(tpq) = timing {
            let spt = |us: u32| us as f64 * 1e-6 / f64::from(tpq);
            segments.push((0u64, 0.0, spt(DEFAULT_TEMPO_US)));
            for &(tick, us) in tempos {
                let &(t0, s0, rate) = segments.last().unwrap();
                let seconds = s0 + (tick - t0) as f64 * rate;
                if tick == t0 {
                    segments.pop();
                }
                segments.push((tick, seconds, spt(us)));
            }
        }
        Self { timing, segments }
    }

    fn seconds(&self, tick: u64) -> f64 {
        match self.timing {
            Timing::Smpte { seconds_per_tick } => tick as f64 * seconds_per_tick,
            Timing::Metrical(_) => {
                let idx = self.segments.partition_point(|&(t, _, _)| t <= tick) - 1;
                let (t0, s0, rate) = self.segments[idx];
                s0 + (tick - t0) as f64 * rate
            }
        }
    }
}

fn pair_notes(track: &RawTrack, clock: &TempoMap, out: &mut ParsedMidi) {
    use std::collections::{HashMap, VecDeque};
    let mut open: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();
    let emit = |pitch: u8, velocity: u8, on: u64, off: u64, out: &mut ParsedMidi| {
        let onset = clock.seconds(on);
        let offset = clock.seconds(off);
        if offset > onset {
            out.notes.push(NoteEvent::new(pitch, velocity, onset, offset));
        } else {
            out.dropped_empty += 1;
        }
    };
    for &(tick, kind) in &track.events {
        match kind {
            RawKind::On {
                channel,
                pitch,
                velocity,
            } => open.entry((channel, pitch)).or_default().push_back((tick, velocity)),
            RawKind::Off { channel, pitch } => {
                if let Some((on, velocity)) = open.get_mut(&(channel, pitch)).and_then(|q| q.pop_front()) {
                    emit(pitch, velocity, on, tick, out);
                }
            }
        }
    }
    let mut leftovers: Vec<_> = open
        .into_iter()
        .flat_map(|((_, pitch), q)| q.into_iter().map(move |(on, v)| (pitch, v, on)))
        .collect();
    leftovers.sort_unstable();
    for (pitch, velocity, on) in leftovers {
        out.closed_at_track_end += 1;
        emit(pitch, velocity, on, track.end_tick, out);
    }
}

/// Onset and frame rolls, each 88 x T, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PianoRoll {
    pub onset: Matrix,
    pub frame: Matrix,
    pub step_seconds: f64,
    /// Notes outside MIDI 21..=108 that were skipped.
    pub dropped_out_of_range: usize,
}

impl PianoRoll {
    pub fn t_steps(&self) -> usize {
        self.onset.cols()
    }

    /// Columns `start..start + len` of both rolls.
    pub fn slice(&self, start: usize, len: usize) -> PianoRoll {
        PianoRoll {
            onset: self.onset.slice_cols(start, len),
            frame: self.frame.slice_cols(start, len),
            step_seconds: self.step_seconds,
            dropped_out_of_range: self.dropped_out_of_range,
        }
    }
}

/// Round-half-up quantization of a time to a step index.
pub fn quantize(time: f64, step_seconds: f64) -> usize {
    // The epsilon keeps exact grid times from falling a ulp short.
    (time / step_seconds + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Encodes notes into onset/frame rolls on a fixed time grid.
///
/// A note occupies steps `[q(onset), q(offset))`, at least one step. Notes are
/// written in onset order, so where two notes of the same pitch share a step the
/// later one's velocity wins.
///
/// Panics if `step_seconds <= 0` or `t_steps == 0`.
pub fn encode_piano_roll(notes: &[NoteEvent], step_seconds: f64, t_steps: usize) -> PianoRoll {
    assert!(step_seconds > 0.0, "step_seconds must be positive");
    assert!(t_steps >= 1, "t_steps must be at least 1");
    let mut onset = Matrix::zeros(N_KEYS, t_steps);
    let mut frame = Matrix::zeros(N_KEYS, t_steps);
    let mut order: Vec<&NoteEvent> = notes.iter().collect();
    order.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    let mut dropped = 0;
    for note in order {
        if !(LOWEST_PITCH..LOWEST_PITCH + N_KEYS as u8).contains(&note.pitch) {
            dropped += 1;
            continue;
        }
        let key = (note.pitch - LOWEST_PITCH) as usize;
        let v = f64::from(note.velocity) / 127.0;
        let start = quantize(note.onset, step_seconds);
        let end = quantize(note.offset, step_seconds).max(start + 1);
        if start >= t_steps {
            continue;
        }
        onset.set(key, start, v);
        for t in start..end.min(t_steps) {
            frame.set(key, t, v);
        }
    }
    PianoRoll {
        onset,
        frame,
        step_seconds,
        dropped_out_of_range: dropped,
    }
}

/// Rows 0..88 are the onset roll, rows 88..176 the frame roll.
pub fn concat_input(roll: &PianoRoll) -> Matrix {
    Matrix::vstack(&[&roll.onset, &roll.frame])
}
