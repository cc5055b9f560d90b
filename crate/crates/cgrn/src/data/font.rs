//! Procedural font parameterization over the base bitmap alphabet.

/// A "font" is a deterministic styling of the 5x7 bitmaps: stroke width
/// and corner rounding in cell units, shear as a slant factor, scale as
/// the fraction of the canvas the glyph box occupies, plus a serif flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthFont {
    pub id: u32,
    pub stroke: f64,
    pub shear: f64,
    pub scale: f64,
    pub serif: bool,
    pub rounding: f64,
}

impl SynthFont {
    pub fn new(id: u32, stroke: f64, shear: f64, scale: f64, serif: bool, rounding: f64) -> Self {
        SynthFont { id, stroke, shear, scale, serif, rounding }
    }
}

/// The built-in font bank. The first few serve as canonical target fonts;
/// later ones are reserved as "novel" scene fonts never seen in training.
pub fn builtin_fonts() -> Vec<SynthFont> {
    vec![
        SynthFont::new(0, 0.80, 0.00, 0.78, false, 0.10), // plain block
        SynthFont::new(1, 0.55, 0.00, 0.80, false, 0.05), // light
        SynthFont::new(2, 0.95, 0.00, 0.72, false, 0.40), // heavy rounded
        SynthFont::new(3, 0.70, 0.00, 0.78, true, 0.05),  // serif
        SynthFont::new(4, 0.70, 0.25, 0.76, false, 0.10), // italic
        SynthFont::new(5, 0.90, 0.18, 0.70, true, 0.20),  // heavy serif italic
        SynthFont::new(6, 0.50, -0.15, 0.82, false, 0.30), // thin back-slant
        SynthFont::new(7, 0.85, 0.08, 0.66, true, 0.45),  // compact rounded serif
    ]
}
