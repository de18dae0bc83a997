//! Triple-difference estimation over rolling post-changepoint windows.
//!
//! The model regresses a transformed daily metric on language indicators
//! (one language is the reference and gets no indicator), a year dummy
//! `Y` (treated year vs control years), a period dummy `P` (treatment window
//! vs baseline), and all their interactions:
//!
//! ```text
//! v = b0 + b1·L + b2·Y + b3·P + b4·YL + b5·PL + b6·YP + b7·YPL + e
//! ```
//!
//! The per-language effect is `b6 + b7[l]` (just `b6` for the reference
//! language). With every (language, Y, P) cell populated the model is
//! saturated, so fitted values equal cell means and the effect equals the
//! triple difference of cell means.

mod design;
mod effects;
mod ols;
mod panel;

pub use design::{build_design, Design, DesignError, DesignLayout};
pub use effects::{
    effect_for_language, effect_to_percent, robustness_variants, run_window_sequence, Effect,
    EffectRecord, EffectSeries, LanguageInput, Variant, WindowFailure, WindowRun, WindowRunSpec,
    CI_SE_MULTIPLIER,
};
pub use ols::{fit_ols, DidFit, OlsError, OlsFit};
pub use panel::{build_panel, map_to_year, PanelError, PanelRow, Transform, WindowSpec, YearSpec};
