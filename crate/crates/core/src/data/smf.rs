//! A small Standard MIDI File writer for generated corpora and test fixtures.

use crate::midi::NoteEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmfEvent {
    NoteOn { channel: u8, pitch: u8, velocity: u8 },
    NoteOff { channel: u8, pitch: u8 },
    /// Microseconds per quarter note.
    Tempo(u32),
}

/// Accumulates tracks of absolute-tick events and serializes a type-1 file
/// (type 0 when there is a single track).
#[derive(Debug, Clone)]
pub struct SmfWriter {
    ticks_per_quarter: u16,
    tracks: Vec<Vec<(u32, SmfEvent)>>,
}

fn push_var_len(out: &mut Vec<u8>, mut value: u32) {
    let mut stack = [0u8; 4];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let cont = if i > 0 { 0x80 } else { 0 };
        out.push(stack[i] | cont);
    }
}

impl SmfWriter {
    pub fn new(ticks_per_quarter: u16) -> Self {
        Self {
            ticks_per_quarter,
            tracks: Vec::new(),
        }
    }

    /// Events are stably sorted by tick before writing.
    pub fn add_track(&mut self, mut events: Vec<(u32, SmfEvent)>) {
        events.sort_by_key(|&(tick, _)| tick);
        self.tracks.push(events);
    }

    /// Single track at a constant tempo, with notes given in seconds.
    pub fn from_notes(notes: &[NoteEvent], bpm: f64, ticks_per_quarter: u16) -> Self {
        let tempo_us = (60_000_000.0 / bpm).round() as u32;
        let ticks_per_second = f64::from(ticks_per_quarter) * 1e6 / f64::from(tempo_us);
        let to_tick = |s: f64| (s * ticks_per_second).round() as u32;
        let mut events = vec![(0, SmfEvent::Tempo(tempo_us))];
        for n in notes {
            events.push((to_tick(n.offset), SmfEvent::NoteOff { channel: 0, pitch: n.pitch }));
        }
        for n in notes {
            events.push((
                to_tick(n.onset),
                SmfEvent::NoteOn {
                    channel: 0,
                    pitch: n.pitch,
                    velocity: n.velocity,
                },
            ));
        }
        // Offs are listed first so a note ending exactly where the next one
        // starts on the same pitch is released before the retrigger.
        let mut w = Self::new(ticks_per_quarter);
        w.add_track(events);
        w
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"MThd");
        out.extend_from_slice(&6u32.to_be_bytes());
        let format: u16 = if self.tracks.len() == 1 { 0 } else { 1 };
        out.extend_from_slice(&format.to_be_bytes());
        out.extend_from_slice(&(self.tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.ticks_per_quarter.to_be_bytes());
        for track in &self.tracks {
            let mut body = Vec::new();
            let mut last = 0u32;
            for &(tick, ev) in track {
                push_var_len(&mut body, tick - last);
                last = tick;
                match ev {
                    SmfEvent::NoteOn {
                        channel,
                        pitch,
                        velocity,
                    } => body.extend_from_slice(&[0x90 | (channel & 0x0f), pitch, velocity]),
                    SmfEvent::NoteOff { channel, pitch } => {
                        body.extend_from_slice(&[0x80 | (channel & 0x0f), pitch, 0x40])
                    }
                    SmfEvent::Tempo(us) => {
                        body.extend_from_slice(&[0xff, 0x51, 0x03]);
                        body.extend_from_slice(&us.to_be_bytes()[1..]);
                    }
                }
            }
            body.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(body.len() as u32).to_be_bytes());
            out.extend_from_slice(&body);
        }
        out
    }
}
