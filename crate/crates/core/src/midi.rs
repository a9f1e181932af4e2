//! Standard MIDI File (format 0/1) ingestion.
//!
//! Only note-on/off, time-signature and end-of-track events are interpreted.
//! Every track is merged into one note stream; same pitch+channel overlaps
//! are paired first-in first-out.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use crate::error::{Error, Result};
use crate::score::{finish_score, Note, Score, TimeSigEvent};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MidiWarning {
    /// A note-on still open at end of track; closed at the track's final tick.
    DanglingNoteOn {
        track: usize,
        channel: u8,
        pitch: u8,
        onset: u64,
        closed_at: u64,
    },
    /// A note-off (or velocity-0 note-on) with no open note; ignored.
    OrphanNoteOff {
        track: usize,
        channel: u8,
        pitch: u8,
        tick: u64,
    },
}

impl fmt::Display for MidiWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MidiWarning::DanglingNoteOn { track, channel, pitch, onset, closed_at } => write!(
                f,
                "track {track}: note-on ch{channel} pitch {pitch} at tick {onset} never released; closed at {closed_at}"
            ),
            MidiWarning::OrphanNoteOff { track, channel, pitch, tick } => write!(
                f,
                "track {track}: note-off ch{channel} pitch {pitch} at tick {tick} has no open note; ignored"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParsedMidi {
    pub score: Score,
    pub warnings: Vec<MidiWarning>,
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Midi(format!(
                "unexpected end of data reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn peek(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity, at most four bytes.
    fn vlq(&mut self, what: &str) -> Result<u32> {
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8(what)?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(Error::Midi(format!(
            "variable-length {what} longer than 4 bytes"
        )))
    }
}

pub fn parse_midi(bytes: &[u8]) -> Result<ParsedMidi> {
    let mut r = Reader::new(bytes);
    if r.take(4, "header magic").ok() != Some(b"MThd".as_slice()) {
        return Err(Error::Midi("missing MThd header".into()));
    }
    let header_len = r.u32("header length")? as usize;
    if header_len < 6 {
        return Err(Error::Midi(format!("header length {header_len} < 6")));
    }
    let header = r.take(header_len, "header")?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let ntracks = u16::from_be_bytes([header[2], header[3]]);
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(Error::Midi(format!("unsupported SMF format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(Error::Midi("SMPTE time division is not supported".into()));
    }
    if division == 0 {
        return Err(Error::Midi("zero ticks per quarter".into()));
    }

    let mut notes = Vec::new();
    let mut time_sigs = Vec::new();
    let mut warnings = Vec::new();
    let mut track = 0usize;
    while track < usize::from(ntracks) {
        if r.remaining() == 0 {
            return Err(Error::Midi(format!(
                "header declares {ntracks} tracks, found {track}"
            )));
        }
        let tag = r.take(4, "chunk tag")?;
        let len = r.u32("chunk length")? as usize;
        let body = r.take(len, "chunk body")?;
        if tag != b"MTrk" {
            // Alien chunks are skipped per SMF rules.
            continue;
        }
        parse_track(track, body, &mut notes, &mut time_sigs, &mut warnings)?;
        track += 1;
    }

    for w in &warnings {
        log::warn!("{w}");
    }
    let notes = notes
        .into_iter()
        .enumerate()
        .map(|(id, (onset, duration, pitch, channel))| Note {
            id,
            onset: onset as i64,
            duration: duration as i64,
            pitch: i64::from(pitch),
            voice: None,
            channel: Some(u32::from(channel)),
        })
        .collect();
    let score = finish_score(Score {
        notes,
        divisions_per_quarter: i64::from(division),
        time_sigs,
        source_name: String::new(),
    })?;
    Ok(ParsedMidi { score, warnings })
}

type RawNote = (u64, u64, u8, u8);

fn parse_track(
    track: usize,
    body: &[u8],
    notes: &mut Vec<RawNote>,
    time_sigs: &mut Vec<TimeSigEvent>,
    warnings: &mut Vec<MidiWarning>,
) -> Result<()> {
    let mut r = Reader::new(body);
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut open: HashMap<(u8, u8), VecDeque<u64>> = HashMap::new();

    while r.remaining() > 0 {
        tick += u64::from(r.vlq("delta time")?);
        let status = match r.peek() {
            Some(b) if b & 0x80 != 0 => {
                r.pos += 1;
                b
            }
            Some(_) => running.ok_or_else(|| {
                Error::Midi(format!("track {track}: data byte without running status"))
            })?,
            None => break,
        };

        match status {
            0xff => {
                running = None;
                let kind = r.u8("meta type")?;
                let len = r.vlq("meta length")? as usize;
                let data = r.take(len, "meta data")?;
                match kind {
                    0x58 if len >= 2 => time_sigs.push(TimeSigEvent {
                        at: tick as i64,
                        numerator: i64::from(data[0]),
                        denominator: 1i64.checked_shl(u32::from(data[1])).unwrap_or(0),
                    }),
                    0x2f => break,
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.vlq("sysex length")? as usize;
                r.take(len, "sysex data")?;
            }
            0xf1..=0xfe => {
                return Err(Error::Midi(format!(
                    "track {track}: system message {status:#04x} inside a file"
                )));
            }
            _ => {
                running = Some(status);
                let kind = status & 0xf0;
                let channel = status & 0x0f;
                let ndata = if kind == 0xc0 || kind == 0xd0 { 1 } else { 2 };
                let data = r.take(ndata, "channel message")?;
                if data.iter().any(|b| b & 0x80 != 0) {
                    return Err(Error::Midi(format!(
                        "track {track}: status byte where data byte expected"
                    )));
                }
                let is_on = kind == 0x90 && data[1] > 0;
                let is_off = kind == 0x80 || (kind == 0x90 && data[1] == 0);
                let pitch = data[0];
                if is_on {
                    open.entry((channel, pitch)).or_default().push_back(tick);
                } else if is_off {
                    match open
                        .get_mut(&(channel, pitch))
                        .and_then(VecDeque::pop_front)
                    {
                        Some(onset) => notes.push((onset, tick - onset, pitch, channel)),
                        None => warnings.push(MidiWarning::OrphanNoteOff {
                            track,
                            channel,
                            pitch,
                            tick,
                        }),
                    }
                }
            }
        }
    }

    let mut dangling: Vec<_> = open
        .into_iter()
        .flat_map(|((channel, pitch), q)| q.into_iter().map(move |on| (on, channel, pitch)))
        .collect();
    dangling.sort_unstable();
    for (onset, channel, pitch) in dangling {
        notes.push((onset, tick - onset, pitch, channel));
        warnings.push(MidiWarning::DanglingNoteOn {
            track,
            channel,
            pitch,
            onset,
            closed_at: tick,
        });
    }
    Ok(())
}

/// Minimal SMF writer used for fixtures and synthetic corpora.
///
/// Each entry is `(tick, channel, pitch, velocity)`; velocity 0 writes a
/// note-on with zero velocity, `None` writes an explicit note-off.
pub fn write_midi_events(ppq: u16, tracks: &[Vec<MidiEvent>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    let format: u16 = if tracks.len() > 1 { 1 } else { 0 };
    out.extend_from_slice(&format.to_be_bytes());
    out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
    out.extend_from_slice(&ppq.to_be_bytes());
    for events in tracks {
        let mut sorted = events.clone();
        sorted.sort_by_key(|e| e.tick);
        let mut body = Vec::new();
        let mut last = 0u64;
        for e in &sorted {
            write_vlq(&mut body, (e.tick - last) as u32);
            last = e.tick;
            match e.kind {
                MidiEventKind::NoteOn {
                    channel,
                    pitch,
                    velocity,
                } => body.extend_from_slice(&[0x90 | channel, pitch, velocity]),
                MidiEventKind::NoteOff { channel, pitch } => {
                    body.extend_from_slice(&[0x80 | channel, pitch, 0])
                }
                MidiEventKind::TimeSignature {
                    numerator,
                    denominator_pow2,
                } => {
                    body.extend_from_slice(&[0xff, 0x58, 0x04, numerator, denominator_pow2, 24, 8])
                }
            }
        }
        body.push(0);
        body.extend_from_slice(&[0xff, 0x2f, 0x00]);
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MidiEvent {
    pub tick: u64,
    pub kind: MidiEventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MidiEventKind {
    NoteOn {
        channel: u8,
        pitch: u8,
        velocity: u8,
    },
    NoteOff {
        channel: u8,
        pitch: u8,
    },
    TimeSignature {
        numerator: u8,
        denominator_pow2: u8,
    },
}

impl MidiEvent {
    pub fn on(tick: u64, pitch: u8) -> Self {
        MidiEvent {
            tick,
            kind: MidiEventKind::NoteOn {
                channel: 0,
                pitch,
                velocity: 80,
            },
        }
    }

    pub fn off(tick: u64, pitch: u8) -> Self {
        MidiEvent {
            tick,
            kind: MidiEventKind::NoteOff { channel: 0, pitch },
        }
    }
}

/// Render a sorted score as a single-track SMF (durations in ticks).
pub fn score_to_midi(score: &Score) -> Vec<u8> {
    let ppq = u16::try_from(score.divisions_per_quarter).unwrap_or(480);
    let mut events = Vec::with_capacity(score.notes.len() * 2 + score.time_sigs.len());
    for ts in &score.time_sigs {
        events.push(MidiEvent {
            tick: ts.at as u64,
            kind: MidiEventKind::TimeSignature {
                numerator: ts.numerator as u8,
                denominator_pow2: ts.denominator.trailing_zeros() as u8,
            },
        });
    }
    // (tick, rank, event): sounding notes release before new onsets at the
    // same tick; zero-length notes release right after their own onset.
    let mut keyed: Vec<(u64, u8, MidiEvent)> = events.into_iter().map(|e| (e.tick, 0, e)).collect();
    for n in &score.notes {
        let ch = n.channel.unwrap_or(0) as u8;
        let pitch = n.pitch as u8;
        let off_rank = if n.duration == 0 { 3 } else { 1 };
        keyed.push((
            n.end() as u64,
            off_rank,
            MidiEvent {
                tick: n.end() as u64,
                kind: MidiEventKind::NoteOff { channel: ch, pitch },
            },
        ));
        keyed.push((
            n.onset as u64,
            2,
            MidiEvent {
                tick: n.onset as u64,
                kind: MidiEventKind::NoteOn {
                    channel: ch,
                    pitch,
                    velocity: 64,
                },
            },
        ));
    }
    keyed.sort_by_key(|&(tick, rank, _)| (tick, rank));
    write_midi_events(ppq, &[keyed.into_iter().map(|(_, _, e)| e).collect()])
}

fn write_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (value & 0x7f) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = ((value & 0x7f) as u8) | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}
