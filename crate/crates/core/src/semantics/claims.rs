use serde::{Deserialize, Serialize};

use crate::roles::{EventLabel, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimKind {
    NodeDegree,
    NodeBetweenness,
    DominantRolePct,
    SecondaryRolePct,
    CommunitySize,
    CompositionPct,
    /// Signed percentage-point change of one role's share.
    CompositionShift,
    EventLabel,
    RoleTrend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimValue {
    Number(f64),
    Event(EventLabel),
    /// Percentages at `t - 1` and `t`.
    Trend {
        from: f64,
        to: f64,
    },
}

/// One checkable statement made by a description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralClaim {
    pub kind: ClaimKind,
    /// Snapshot position the claim is about.
    pub t: usize,
    pub node: Option<String>,
    /// Community at `t`.
    pub community: Option<usize>,
    /// Community at `t - 1` for evolution claims.
    pub previous_community: Option<usize>,
    pub role: Option<Role>,
    pub value: ClaimValue,
    pub tolerance: f64,
}

impl StructuralClaim {
    /// Claim skeleton; finish with [`number`](Self::number),
    /// [`event`](Self::event) or [`trend`](Self::trend).
    pub fn about(t: usize) -> Self {
        Self {
            kind: ClaimKind::NodeDegree,
            t,
            node: None,
            community: None,
            previous_community: None,
            role: None,
            value: ClaimValue::Number(0.0),
            tolerance: 0.0,
        }
    }

    pub fn node(mut self, node: &str) -> Self {
        self.node = Some(node.to_string());
        self
    }

    pub fn community(mut self, c: usize) -> Self {
        self.community = Some(c);
        self
    }

    pub fn role(mut self, role: Role) -> Self {
        self.role = Some(role);
        self
    }

    pub fn number(mut self, kind: ClaimKind, value: f64, tolerance: f64) -> Self {
        self.kind = kind;
        // normalizes -0.0 so it renders as "0"
        self.value = ClaimValue::Number(value + 0.0);
        self.tolerance = tolerance;
        self
    }

    pub fn event(mut self, label: EventLabel) -> Self {
        self.kind = ClaimKind::EventLabel;
        self.value = ClaimValue::Event(label);
        self.tolerance = 0.0;
        self
    }

    pub fn trend(mut self, from: f64, to: f64) -> Self {
        self.kind = ClaimKind::RoleTrend;
        self.value = ClaimValue::Trend {
            from: from + 0.0,
            to: to + 0.0,
        };
        self.tolerance = super::ROUNDING_TOLERANCE;
        self
    }

    /// Numerals this claim contributes to rendered text, formatted as printed.
    pub fn numerals(&self) -> Vec<String> {
        match (&self.kind, &self.value) {
            (ClaimKind::NodeBetweenness, ClaimValue::Number(v)) => vec![format!("{v:.2}")],
            (ClaimKind::CompositionShift, ClaimValue::Number(v)) => vec![format!("{}", v.abs())],
            (_, ClaimValue::Number(v)) => vec![format!("{v}")],
            (_, ClaimValue::Trend { from, to }) => vec![format!("{from}"), format!("{to}")],
            (_, ClaimValue::Event(_)) => Vec::new(),
        }
    }
}

/// Free-standing numerals in `text`: digit runs (with decimals) that are
/// not glued to a preceding letter, so identifiers such as `C3` or `v12`
/// are skipped.
pub fn numerals_in(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_alphanumeric()
                    || chars[i] == '_'
                    || (chars[i] == '.'
                        && i + 1 < chars.len()
                        && chars[i + 1].is_ascii_digit()
                        && chars[start].is_ascii_digit()))
            {
                i += 1;
            }
            let token: String = chars[start..i].iter().collect();
            if token.chars().all(|ch| ch.is_ascii_digit() || ch == '.') {
                out.push(token);
            }
        } else {
            i += 1;
        }
    }
    out
}
