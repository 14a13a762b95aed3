use crate::tactile::{HandMask, TactileFrame, ADC_MAX, COLS, ROWS};

pub const RAMP: &[u8] = b".:-=+*#%@";

/// Equal-width code bins, lowest glyph for 0 and highest for full scale.
pub fn glyph_index(code: u16) -> usize {
    (code.min(ADC_MAX) as usize * RAMP.len()) / (ADC_MAX as usize + 1)
}

pub fn glyph(code: u16) -> char {
    RAMP[glyph_index(code)] as char
}

/// One line per row; taxels outside the mask are blank.
pub fn render_frame(frame: &TactileFrame, mask: &HandMask) -> Vec<String> {
    (0..ROWS)
        .map(|r| (0..COLS).map(|c| if mask.is_active(r, c) { glyph(frame.get(r, c)) } else { ' ' }).collect())
        .collect()
}
