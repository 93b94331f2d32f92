//! View and branch identifiers shared across the crate.

use std::fmt;
use std::str::FromStr;

/// One low-level input representation of the same audio clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum View {
    Mel,
    Gammatone,
    Cqt,
    Raw,
}

impl View {
    pub const ALL: [View; 4] = [View::Mel, View::Gammatone, View::Cqt, View::Raw];

    pub fn name(self) -> &'static str {
        match self {
            View::Mel => "mel",
            View::Gammatone => "gam",
            View::Cqt => "cqt",
            View::Raw => "raw",
        }
    }

    /// Stable on-disk code used by the feature cache.
    pub fn code(self) -> u8 {
        match self {
            View::Mel => 0,
            View::Gammatone => 1,
            View::Cqt => 2,
            View::Raw => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<View> {
        View::ALL.into_iter().find(|v| v.code() == code)
    }

    pub fn is_spectral(self) -> bool {
        self != View::Raw
    }
}

impl FromStr for View {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mel" => Ok(View::Mel),
            "gam" | "gammatone" => Ok(View::Gammatone),
            "cqt" => Ok(View::Cqt),
            "raw" => Ok(View::Raw),
            other => Err(format!("unknown view name: {other}")),
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A classification branch: one per view plus the joint branch over the
/// concatenated multi-view embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Branch {
    View(View),
    Joint,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::View(v) => v.name(),
            Branch::Joint => "joint",
        }
    }

    /// Branch order used everywhere weights or losses are listed.
    pub fn order(views: &[View]) -> Vec<Branch> {
        let mut out: Vec<Branch> = views.iter().map(|&v| Branch::View(v)).collect();
        out.push(Branch::Joint);
        out
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
