//! Configuration files shipped with the crate, one per figure dataset.

pub struct Preset {
    pub name: &'static str,
    pub text: &'static str,
}

impl Preset {
    /// The leading comment line of the file.
    pub fn description(&self) -> &'static str {
        self.text.lines().next().and_then(|l| l.strip_prefix('#')).map(str::trim).unwrap_or("")
    }
}

macro_rules! preset {
    ($name:literal) => {
        Preset { name: $name, text: include_str!(concat!("../../../presets/", $name, ".cfg")) }
    };
}

pub const PRESETS: &[Preset] = &[
    preset!("fig2"),
    preset!("fig3"),
    preset!("fig3_nopulse"),
    preset!("fig3b_drive05"),
    preset!("fig3b_drive25"),
    preset!("fig4"),
    preset!("fig5"),
    preset!("fig6"),
];

pub fn find(name: &str) -> Option<&'static Preset> {
    let name = name.strip_suffix(".cfg").unwrap_or(name);
    PRESETS.iter().find(|p| p.name == name)
}
