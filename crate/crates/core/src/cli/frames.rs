//! Frame inputs for the CLI: SHRC recordings, or a plain-text frame of 32
//! lines × 32 codes with `#` comments.

use std::fmt::Write as _;
use std::path::Path;

use super::CliError;
use crate::tactile::{load_recording, Recording, TactileFrame, COLS, ROWS};

pub fn frame_to_text(frame: &TactileFrame) -> String {
    let mut s = format!("# smarthand frame seq={} ts_us={}\n", frame.seq, frame.timestamp_us);
    for r in 0..ROWS {
        let row: Vec<String> = (0..COLS).map(|c| frame.get(r, c).to_string()).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn frame_from_text(text: &str) -> Result<TactileFrame, CliError> {
    let mut codes = Vec::with_capacity(ROWS * COLS);
    let mut rows = 0;
    for (idx, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let before = codes.len();
        for w in content.split_whitespace() {
            codes.push(
                w.parse::<u16>().map_err(|_| CliError::Data(format!("frame line {}: bad code {w:?}", idx + 1)))?,
            );
        }
        if codes.len() - before != COLS {
            return Err(CliError::Data(format!("frame line {}: expected {COLS} codes", idx + 1)));
        }
        rows += 1;
    }
    if rows != ROWS {
        return Err(CliError::Data(format!("frame has {rows} rows, expected {ROWS}")));
    }
    TactileFrame::new(codes, 0, 0).map_err(|e| CliError::Data(e.to_string()))
}

fn is_recording(bytes: &[u8]) -> bool {
    bytes.starts_with(b"SHRC")
}

/// A single frame: a text frame, or the first frame of a recording.
pub fn load_frame(path: &Path) -> Result<TactileFrame, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if is_recording(&bytes) {
        let rec = Recording::from_bytes(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        return rec.frames().first().cloned().ok_or_else(|| CliError::Data(format!("{}: no frames", path.display())));
    }
    let text = String::from_utf8(bytes).map_err(|_| CliError::Data(format!("{}: not a frame file", path.display())))?;
    frame_from_text(&text).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn load_rec(path: &Path) -> Result<Recording, CliError> {
    load_recording(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
