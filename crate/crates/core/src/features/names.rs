use serde::{Deserialize, Serialize};

macro_rules! features {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// Named clinical features, in the fixed export column order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(into = "String", try_from = "String")]
        pub enum Feature {
            $($variant),+
        }

        impl Feature {
            pub const ALL: &'static [Feature] = &[$(Feature::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(Feature::$variant => $name),+
                }
            }

            pub fn from_name(name: &str) -> Option<Feature> {
                match name {
                    $($name => Some(Feature::$variant),)+
                    _ => None,
                }
            }
        }
    };
}

features! {
    G7dr => "g_7dr",
    VeryLow7dr => "very_low_7dr",
    Low7dr => "low_7dr",
    InRange7dr => "in_range_7dr",
    High7dr => "high_7dr",
    VeryHigh7dr => "very_high_7dr",
    Gri7dr => "gri_7dr",
    G14dr => "g_14dr",
    VeryLow14dr => "very_low_14dr",
    Low14dr => "low_14dr",
    InRange14dr => "in_range_14dr",
    High14dr => "high_14dr",
    VeryHigh14dr => "very_high_14dr",
    Gri14dr => "gri_14dr",
    NightVeryLow7dr => "night_very_low_7dr",
    NightLow7dr => "night_low_7dr",
    NightHigh7dr => "night_high_7dr",
    NightVeryHigh7dr => "night_very_high_7dr",
    DayVeryLow7dr => "day_very_low_7dr",
    DayLow7dr => "day_low_7dr",
    DayHigh7dr => "day_high_7dr",
    DayVeryHigh7dr => "day_very_high_7dr",
    TimeWorn7dr => "time_worn_7dr",
    NightWorn7dr => "night_worn_7dr",
    DayWorn7dr => "day_worn_7dr",
    Gri7drDelta => "gri_7dr_7d_delta",
    VeryLow7drDelta => "very_low_7dr_7d_delta",
    Low7drDelta => "low_7dr_7d_delta",
    InRange7drDelta => "in_range_7dr_7d_delta",
    VeryHigh7drDelta => "very_high_7dr_7d_delta",
    NightVeryLow7drDelta => "night_very_low_7dr_7d_delta",
    NightLow7drDelta => "night_low_7dr_7d_delta",
    NightHigh7drDelta => "night_high_7dr_7d_delta",
    SexF => "sexF",
    PublicInsurance => "public_insurance",
    EnglishPrimaryLanguage => "english_primary_language",
    PopPilot => "pop_pilot",
    Pop4T1 => "pop_4T_1",
    Pop4T2 => "pop_4T_2",
    PopTips => "pop_TIPS",
    Age => "age",
    MonthsSinceOnset => "months_since_onset",
    UsingPump => "using_pump",
    UsingAid => "using_aid",
    DaysSinceMsg => "days_since_msg",
    LargeTirDrop => "large_tir_drop",
    LowTir => "low_tir",
    Lows => "lows",
    VeryLows => "very_lows",
}

pub const FEATURE_COUNT: usize = Feature::ALL.len();

impl Feature {
    /// Features shown to clinicians during remote review.
    pub const TIDE: &'static [Feature] = &[
        Feature::VeryLow7dr,
        Feature::Low7dr,
        Feature::InRange7dr,
        Feature::G7dr,
        Feature::UsingPump,
        Feature::InRange7drDelta,
        Feature::LargeTirDrop,
        Feature::LowTir,
        Feature::Lows,
        Feature::VeryLows,
        Feature::Pop4T1,
        Feature::Pop4T2,
        Feature::PopTips,
    ];

    /// Demographics added to the TIDE view to form the control covariates.
    pub const CONTROL_DEMOGRAPHICS: &'static [Feature] = &[
        Feature::Age,
        Feature::SexF,
        Feature::PublicInsurance,
        Feature::EnglishPrimaryLanguage,
    ];
}

impl From<Feature> for String {
    fn from(f: Feature) -> String {
        f.name().to_string()
    }
}

impl TryFrom<String> for Feature {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Feature::from_name(&s).ok_or_else(|| format!("unknown feature {s}"))
    }
}

impl std::fmt::Display for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
